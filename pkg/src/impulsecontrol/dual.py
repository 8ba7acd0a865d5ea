"""Lagrangian dual route for the constrained problem.

The dual functional is h(g) = W*_g(x0) - sum_j g_j d_j where W*_g is the
Bellman value under the combined cost; it is a pointwise minimum of g-affine
functions, hence concave.  The constrained solve proceeds in four steps:
evaluate h per multiplier, maximize it over nonnegative multipliers (golden
section for one constraint, projected supergradient ascent otherwise),
extract the near-minimizer action sets at the maximizer, and mix candidate
deterministic stationary policies so the mixture is feasible with every
active constraint tight (complementary slackness).  Optimality certificates
(feasibility, Lagrangian value, slackness, weak duality) are checked last.

Dual evaluations are memoized by the exact bit pattern of g, so golden
section re-probing identical points is free.  Evaluations at distinct g are
independent; only the memo insert needs to be atomic if run concurrently.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.optimize import linprog

from .model import DiscreteMDP
from .bellman import (BellmanConfig, MinimizerSet, StationaryPolicy,
                      argmin_set, default_slack, solve_W)
from .policy_eval import CostVector, MixedPolicy, eval_mixture, eval_policy


class DualBracketError(RuntimeError):
    """The dual functional kept increasing up to the doubling cap.

    An unbounded dual means the primal constraints admit no strictly feasible
    point (the Slater condition fails) or no feasible point at all.
    """


class MixtureInfeasibleError(RuntimeError):
    """No convex combination of candidate policies meets the constraints.

    Retry with a larger minimizer slack (more candidates) or a finer grid.
    """


@dataclass(frozen=True)
class DualConfig:
    """Tuning for the dual maximization and mixture construction.

    ``argmin_slack`` is the starting relative slack for minimizer-set
    extraction; when no feasible mixture exists among the candidates the
    slack grows by ``slack_growth`` up to ``max_slack``.  Multipliers above
    ``multiplier_tol`` mark their constraint active (tight in the mixture
    program).
    """

    bellman: BellmanConfig = BellmanConfig()
    g_init: float = 1.0
    g_tol: float = 1e-8
    bracket_cap: float = 2.0 ** 60
    ascent_iterations: int = 300
    ascent_step: float = 1.0
    argmin_slack: float = 1e-7
    slack_growth: float = 10.0
    max_slack: float = 2e-2
    multiplier_tol: float = 1e-6
    feasibility_tol: float = 1e-6
    slackness_tol: float = 1e-4
    certificate_tol: float = 1e-2
    mixture_cap: int = 64
    seed: int = 0


@dataclass(frozen=True)
class DualPoint:
    """One dual evaluation: multiplier, dual value, W*_g(x0), greedy slacks."""

    g: np.ndarray
    h: float
    W0: float
    slacks: np.ndarray  # V_j(greedy policy) - d_j
    converged: bool

    def __post_init__(self):
        object.__setattr__(self, "g", np.asarray(self.g, dtype=float))
        object.__setattr__(self, "slacks", np.asarray(self.slacks, dtype=float))


@dataclass(frozen=True)
class CertificateReport:
    """Optimality certificates for a dual result (report-only).

    ``feasibility_excess[j]`` is max(V_j - d_j, 0) for the mixture;
    ``lagrangian_gap`` is |V_0 + sum_j g*_j (V_j - d_j) - h(g*)|, which is the
    distance of the mixture from minimizing the Lagrangian at g*;
    ``slackness_residual`` is |sum_j g*_j (V_j - d_j)|;
    ``weak_duality_violation`` is the largest h(g) - V_0(mixture) over the
    dual trace, clipped at 0.  Each check carries its tolerance.
    """

    feasibility_excess: np.ndarray
    feasibility_tol: np.ndarray
    lagrangian_gap: float
    lagrangian_tol: float
    slackness_residual: float
    slackness_tol: float
    weak_duality_violation: float
    weak_duality_tol: float
    duality_gap: float

    @property
    def feasible(self) -> bool:
        return bool(np.all(self.feasibility_excess <= self.feasibility_tol))

    @property
    def lagrangian_ok(self) -> bool:
        return self.lagrangian_gap <= self.lagrangian_tol

    @property
    def slackness_ok(self) -> bool:
        return self.slackness_residual <= self.slackness_tol

    @property
    def weak_duality_ok(self) -> bool:
        return self.weak_duality_violation <= self.weak_duality_tol

    @property
    def ok(self) -> bool:
        return (self.feasible and self.lagrangian_ok and self.slackness_ok
                and self.weak_duality_ok)

    def as_dict(self) -> dict:
        return {
            "feasibility_excess": list(map(float, self.feasibility_excess)),
            "feasibility_tol": list(map(float, self.feasibility_tol)),
            "feasibility_ok": self.feasible,
            "lagrangian_gap": self.lagrangian_gap,
            "lagrangian_tol": self.lagrangian_tol,
            "lagrangian_ok": self.lagrangian_ok,
            "slackness_residual": self.slackness_residual,
            "slackness_tol": self.slackness_tol,
            "slackness_ok": self.slackness_ok,
            "weak_duality_violation": self.weak_duality_violation,
            "weak_duality_tol": self.weak_duality_tol,
            "weak_duality_ok": self.weak_duality_ok,
            "duality_gap": self.duality_gap,
            "ok": self.ok,
        }


@dataclass(frozen=True)
class DualResult:
    """Everything the constrained solve produced."""

    g_star: np.ndarray
    h_star: float
    W0: float
    F: tuple                     # candidate minimizer policies
    mixture: MixedPolicy
    costs: CostVector            # mixture cost vector
    certificates: CertificateReport
    trace: tuple                 # DualPoint per distinct evaluated g
    slack_used: float
    converged: bool


def _bounds_vector(mdp: DiscreteMDP) -> np.ndarray:
    return np.asarray(mdp.bounds, dtype=float)


def dual_value(mdp: DiscreteMDP, g, cfg: BellmanConfig = BellmanConfig()) -> DualPoint:
    """Evaluate the dual functional at one multiplier.

    Solves the combined-cost Bellman problem and returns
    h(g) = W*_g(x0) - sum g_j d_j together with the constraint slacks of the
    greedy policy (the supergradient surrogate used by the ascent).
    """
    g = np.atleast_1d(np.asarray(g, dtype=float))
    d = _bounds_vector(mdp)
    sol = solve_W(mdp, g, cfg)
    W0 = float(sol.W[mdp.x0_index])
    v = eval_policy(mdp, sol.policy).v
    return DualPoint(
        g=g, h=W0 - float(g @ d), W0=W0, slacks=v[1:] - d,
        converged=sol.converged)


class _DualCache:
    """Memo of dual evaluations keyed by the exact bit pattern of g."""

    def __init__(self, mdp: DiscreteMDP, cfg: DualConfig):
        self.mdp = mdp
        self.cfg = cfg
        self.points: dict[bytes, DualPoint] = {}
        self.order: list[DualPoint] = []

    def eval(self, g) -> DualPoint:
        g = np.atleast_1d(np.asarray(g, dtype=float))
        key = g.tobytes()
        pt = self.points.get(key)
        if pt is None:
            pt = dual_value(self.mdp, g, self.cfg.bellman)
            self.points[key] = pt
            self.order.append(pt)
        return pt

    def best(self) -> DualPoint:
        return max(self.order, key=lambda p: p.h)


_INVPHI = (math.sqrt(5.0) - 1.0) / 2.0


def _golden_section(cache: _DualCache, lo: float, hi: float, tol: float) -> None:
    a, b = lo, hi
    c = b - _INVPHI * (b - a)
    d_ = a + _INVPHI * (b - a)
    fc = cache.eval([c]).h
    fd = cache.eval([d_]).h
    while b - a > tol:
        if fc >= fd:
            b, d_, fd = d_, c, fc
            c = b - _INVPHI * (b - a)
            fc = cache.eval([c]).h
        else:
            a, c, fc = c, d_, fd
            d_ = a + _INVPHI * (b - a)
            fd = cache.eval([d_]).h


def _maximize_scalar(cache: _DualCache) -> None:
    cfg = cache.cfg
    h_prev = cache.eval([0.0]).h
    g_prev = 0.0
    g_cur = cfg.g_init
    h_cur = cache.eval([g_cur]).h
    if h_cur > h_prev:
        # double until the dual value drops
        while True:
            g_next = 2.0 * g_cur
            if g_next > cfg.bracket_cap:
                raise DualBracketError(
                    "dual functional still increasing at multiplier "
                    f"{g_cur:.6g} (doubling cap {cfg.bracket_cap:.3g}); the "
                    "constraints appear to admit no strictly feasible point")
            h_next = cache.eval([g_next]).h
            if h_next < h_cur:
                lo, hi = g_prev, g_next
                break
            g_prev, h_prev = g_cur, h_cur
            g_cur, h_cur = g_next, h_next
    else:
        lo, hi = 0.0, g_cur
    _golden_section(cache, lo, hi, cfg.g_tol * (1.0 + hi))


def _maximize_ascent(cache: _DualCache, n: int) -> None:
    cfg = cache.cfg
    g = np.zeros(n)
    pt = cache.eval(g)
    for k in range(1, cfg.ascent_iterations + 1):
        if not np.all(np.isfinite(pt.slacks)):
            break
        step = cfg.ascent_step / math.sqrt(k)
        g = np.maximum(g + step * pt.slacks, 0.0)
        pt = cache.eval(g)


def maximize_dual(mdp: DiscreteMDP, cfg: DualConfig = DualConfig()):
    """Find a maximizer of the concave dual functional over g >= 0.

    One constraint: bracket [0, g_max] by doubling until the dual value
    decreases, then golden section down to the g tolerance.  Two or more:
    projected supergradient ascent with step ascent_step/sqrt(k), using the
    greedy policy's constraint slacks as the supergradient, keeping the best
    iterate.  Boundary maximizers (g_j = 0) are admissible.  Returns the best
    multiplier and the trace of every distinct evaluation.
    """
    cache = _DualCache(mdp, cfg)
    n = mdp.n_constraints
    if n == 0:
        cache.eval(np.zeros(0))
    elif n == 1:
        _maximize_scalar(cache)
    else:
        _maximize_ascent(cache, n)
    best = cache.best()
    return best.g, list(cache.order)


def _enumerate_candidates(sets: MinimizerSet, n_labels: int, cap: int,
                          rng: np.random.Generator,
                          extra=()) -> list[StationaryPolicy]:
    """Candidate policies from per-state minimizer sets.

    Uniform-rank selections and single-switch (threshold-like) combinations
    of the lowest and highest actions come first; random per-state selections
    fill up to the cap when the structured candidates run out.
    """
    n = len(sets.sets)
    out: list[StationaryPolicy] = []
    seen: set[bytes] = set()

    def add(flat) -> None:
        pol = StationaryPolicy.from_flat(np.asarray(flat, dtype=np.intp), n_labels)
        key = pol.choice.tobytes()
        if key not in seen:
            seen.add(key)
            out.append(pol)

    for pol in extra:
        add(pol.flat)
    max_size = sets.max_size()
    for r in range(max_size):
        add([s[min(r, s.size - 1)] for s in sets.sets])
        if len(out) >= cap:
            return out[:cap]
    if max_size == 1:
        return out
    low = np.asarray([s[0] for s in sets.sets], dtype=np.intp)
    high = np.asarray([s[-1] for s in sets.sets], dtype=np.intp)
    room = max(cap - len(out), 0)
    n_splits = min(n - 1, max(room // 2, 0))
    if n_splits > 0:
        for s in np.unique(np.linspace(1, n - 1, n_splits).astype(int)):
            add(np.concatenate([high[:s], low[s:]]))
            add(np.concatenate([low[:s], high[s:]]))
            if len(out) >= cap:
                return out[:cap]
    tries = 0
    while len(out) < cap and tries < 10 * cap:
        add([rng.choice(s) for s in sets.sets])
        tries += 1
    return out[:cap]


def mix_weights(values: np.ndarray, d: np.ndarray, active: np.ndarray,
                objective: np.ndarray | None = None) -> np.ndarray | None:
    """Nonnegative weights summing to 1 with constrained weighted costs.

    ``values`` is (n_candidates, J) of constraint cost values; the weighted
    sum must equal d_j where ``active`` and stay <= d_j elsewhere.  Among
    feasible weightings the ``objective`` (default: zeros) is minimized;
    returns None when infeasible.  The LP is solved with dual simplex so the
    solution is a vertex, hence supported on at most J+1 candidates.
    """
    n_cand, J = values.shape
    c = np.zeros(n_cand) if objective is None else np.asarray(objective, dtype=float)
    A_eq = [np.ones(n_cand)]
    b_eq = [1.0]
    A_ub, b_ub = [], []
    for j in range(J):
        if active[j]:
            A_eq.append(values[:, j])
            b_eq.append(d[j])
        else:
            A_ub.append(values[:, j])
            b_ub.append(d[j])
    res = linprog(
        c, A_ub=np.asarray(A_ub) if A_ub else None,
        b_ub=np.asarray(b_ub) if b_ub else None,
        A_eq=np.asarray(A_eq), b_eq=np.asarray(b_eq),
        bounds=(0.0, None), method="highs-ds")
    if not res.success:
        return None
    w = np.maximum(res.x, 0.0)
    w[w < 1e-12] = 0.0
    total = w.sum()
    if total <= 0.0:
        return None
    return w / total


def _reduce_support(w: np.ndarray, values: np.ndarray, d: np.ndarray,
                    active: np.ndarray, max_support: int) -> np.ndarray:
    """Trim a feasible weighting to at most max_support positive weights.

    Moves along null directions of the tight rows until weights drop to zero,
    rejecting directions that would break an inactive constraint.  The LP
    vertex already satisfies the support bound in practice; this is a guard
    for degenerate ties.
    """
    for _ in range(len(w)):
        support = np.nonzero(w > 0.0)[0]
        if support.size <= max_support:
            return w
        rows = [np.ones(support.size)]
        for j in range(values.shape[1]):
            if active[j]:
                rows.append(values[support, j])
        A = np.asarray(rows)
        _, s, vt = np.linalg.svd(A)
        null = vt[np.sum(s > 1e-12):]
        if null.size == 0:
            return w
        moved = False
        for z in (null[0], -null[0]):
            neg = z < -1e-15
            if not np.any(neg):
                continue
            t = np.min(w[support][neg] / -z[neg])
            w_new = w.copy()
            w_new[support] = np.maximum(w[support] + t * z, 0.0)
            w_new /= w_new.sum()
            ok = True
            for j in range(values.shape[1]):
                if not active[j] and w_new @ values[:, j] > d[j] + 1e-9 * (1.0 + d[j]):
                    ok = False
                    break
            if ok:
                w = w_new
                moved = True
                break
        if not moved:
            return w
    return w


def _mixture_from_sets(mdp: DiscreteMDP, g_star, F_sets: MinimizerSet,
                       cfg: DualConfig, extra_candidates):
    """Candidate policies and a feasible mixture over them, or raise."""
    g_star = np.atleast_1d(np.asarray(g_star, dtype=float))
    d = _bounds_vector(mdp)
    rng = np.random.default_rng(cfg.seed)
    candidates = _enumerate_candidates(
        F_sets, mdp.n_labels, cfg.mixture_cap, rng, extra=extra_candidates)
    vectors = []
    kept = []
    for pol in candidates:
        v = eval_policy(mdp, pol).v
        if np.all(np.isfinite(v)):
            vectors.append(v)
            kept.append(pol)
    if not kept:
        raise MixtureInfeasibleError(
            "every candidate minimizer policy has infinite cost")
    V = np.asarray(vectors)
    active = g_star > cfg.multiplier_tol
    w = mix_weights(V[:, 1:], d, active, objective=V[:, 0])
    if w is None:
        raise MixtureInfeasibleError(
            f"no feasible mixture among {len(kept)} candidates (active "
            f"constraints {np.nonzero(active)[0].tolist()}); increase the "
            "minimizer slack or refine the grid")
    w = _reduce_support(w, V[:, 1:], d, active, max_support=d.size + 1)
    support = np.nonzero(w > 0.0)[0]
    mixture = MixedPolicy(
        weights=tuple(float(w[i]) for i in support),
        policies=tuple(kept[i] for i in support))
    return mixture, tuple(kept)


def build_mixture(mdp: DiscreteMDP, g_star, F_sets: MinimizerSet,
                  cfg: DualConfig = DualConfig(), extra_candidates=()) -> MixedPolicy:
    """Mix candidate minimizer policies to meet the constraints.

    Enumerates candidate deterministic stationary policies from the per-state
    minimizer sets (threshold-like single-switch selectors, capped), evaluates
    their cost vectors, and solves the small feasibility program: weights
    nonnegative and summing to 1, weighted constraint costs <= d_j with
    equality for every j whose multiplier exceeds the multiplier tolerance.
    The returned mixture has at most J+1 strictly positive weights.  Raises
    MixtureInfeasibleError when no candidate combination works (increase the
    minimizer slack or refine the grid).
    """
    mixture, _ = _mixture_from_sets(mdp, g_star, F_sets, cfg, extra_candidates)
    return mixture


def verify_optimality(mdp: DiscreteMDP, result: DualResult,
                      d=None, cfg: DualConfig = DualConfig()) -> CertificateReport:
    """Check the optimality certificates of a solved instance (report-only).

    Feasibility of the mixture, Lagrangian minimality at g* (the mixture's
    Lagrangian value must match h(g*)), complementary slackness, and weak
    duality of every dual trace point against the mixture value.
    """
    d = _bounds_vector(mdp) if d is None else np.asarray(d, dtype=float)
    v = result.costs.v
    g = result.g_star
    h_star = result.h_star
    slack_terms = v[1:] - d
    scale = 1.0 + abs(h_star)
    weak_tol = 10.0 * cfg.bellman.tolerance + 1e-8 * scale
    violations = [pt.h - v[0] for pt in result.trace]
    return CertificateReport(
        feasibility_excess=np.maximum(slack_terms, 0.0),
        feasibility_tol=cfg.feasibility_tol * (1.0 + d),
        lagrangian_gap=abs(float(v[0] + g @ slack_terms) - h_star),
        lagrangian_tol=cfg.certificate_tol * scale,
        slackness_residual=abs(float(g @ slack_terms)),
        slackness_tol=cfg.slackness_tol * scale,
        weak_duality_violation=max(0.0, max(violations) if violations else 0.0),
        weak_duality_tol=weak_tol,
        duality_gap=abs(h_star - float(v[0])),
    )


def solve_constrained(mdp: DiscreteMDP, cfg: DualConfig = DualConfig()) -> DualResult:
    """Run the full dual procedure and certify the result.

    Maximizes the dual, extracts minimizer sets at the best multiplier, and
    builds the constrained mixture; when the mixture program is infeasible
    the minimizer slack escalates geometrically up to ``cfg.max_slack``
    before giving up (a wider slack admits more candidate policies at a
    slightly weaker optimality guarantee, reported via ``slack_used``).
    """
    g_star, trace = maximize_dual(mdp, cfg)
    sol = solve_W(mdp, g_star, cfg.bellman)
    W = sol.values
    W0 = float(sol.W[mdp.x0_index])
    d = _bounds_vector(mdp)
    h_star = W0 - float(g_star @ d)

    rel = cfg.argmin_slack
    mixture = None
    candidates: tuple = ()
    slack_used = rel
    last_err: Exception | None = None
    while rel <= cfg.max_slack:
        F_sets = argmin_set(mdp, W, g_star, default_slack(W, rel))
        try:
            mixture, candidates = _mixture_from_sets(
                mdp, g_star, F_sets, cfg, extra_candidates=(sol.policy,))
            slack_used = rel
            break
        except MixtureInfeasibleError as err:
            last_err = err
            rel *= cfg.slack_growth
    if mixture is None:
        raise MixtureInfeasibleError(
            f"no feasible mixture up to relative slack {cfg.max_slack:.3g}: "
            f"{last_err}")

    costs = eval_mixture(mdp, mixture)
    partial = DualResult(
        g_star=g_star, h_star=h_star, W0=W0, F=candidates, mixture=mixture,
        costs=costs, certificates=None, trace=tuple(trace),
        slack_used=slack_used,
        converged=sol.converged and all(pt.converged for pt in trace))
    certificates = verify_optimality(mdp, partial, d=d, cfg=cfg)
    return DualResult(
        g_star=g_star, h_star=h_star, W0=W0, F=candidates, mixture=mixture,
        costs=costs, certificates=certificates, trace=tuple(trace),
        slack_used=slack_used, converged=partial.converged)
