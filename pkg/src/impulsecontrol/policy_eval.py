"""Exact evaluation of stationary policies, mixtures and occupation measures.

Two deliberately independent evaluation paths are kept for cross-validation:
a trajectory walk that sums the geometric series of repeating cycles in
closed form (exact when landings hit grid points), and a sparse linear solve
of the interpolated fixed-point system (the default for arbitrary policies).
A third, grid-free oracle integrates the continuous-time cost sum directly
along the true flow.  All operations are pure functions of immutable inputs
and safe for concurrent use.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .model import DiscreteMDP, ImpulseProblem, stage_cost
from .bellman import StationaryPolicy


@dataclass(frozen=True)
class CostVector:
    """Discounted total cost per cost index; +inf entries mark divergence."""

    v: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.v, dtype=float)
        object.__setattr__(self, "v", v)
        if np.any(np.isnan(v)) or np.any(v < 0.0):
            raise ValueError(f"cost vector entries must be >= 0, got {v}")

    @property
    def finite(self) -> bool:
        return bool(np.all(np.isfinite(self.v)))

    def __len__(self) -> int:
        return self.v.size


@dataclass(frozen=True)
class OccupationMeasure:
    """Expected discounted visit counts per (grid state, action) cell."""

    mass: np.ndarray  # (n_states, n_actions)
    total: float

    @property
    def state_marginal(self) -> np.ndarray:
        return self.mass.sum(axis=1)


@dataclass(frozen=True)
class MixedPolicy:
    """Convex mixture of deterministic stationary policies."""

    weights: tuple
    policies: tuple

    def __post_init__(self):
        if len(self.weights) != len(self.policies):
            raise ValueError("weights and policies must have equal length")
        w = np.asarray(self.weights, dtype=float)
        if np.any(w <= 0.0) or np.any(w > 1.0):
            raise ValueError(f"mixture weights must lie in (0, 1], got {w}")
        if abs(float(w.sum()) - 1.0) > 1e-12:
            raise ValueError(f"mixture weights must sum to 1, got sum {w.sum()!r}")


def _policy_transition(mdp: DiscreteMDP, f: StationaryPolicy) -> sp.csr_matrix:
    """Sub-stochastic state-to-state matrix of the chain induced by f."""
    n = mdp.n_states
    rows = np.arange(n)
    q = f.flat
    s = mdp.survival[q]
    lo = mdp.next_lo[rows, q]
    hi = mdp.next_hi[rows, q]
    wl = mdp.w_lo[rows, q] * s
    wh = mdp.w_hi[rows, q] * s
    mat = sp.coo_matrix(
        (np.concatenate([wl, wh]),
         (np.concatenate([rows, rows]), np.concatenate([lo, hi]))),
        shape=(n, n))
    return mat.tocsr()


def _policy_cells(mdp: DiscreteMDP, f: StationaryPolicy):
    rows = np.arange(mdp.n_states)
    q = f.flat
    return rows, q, mdp.costs[:, rows, q]  # (n,), (n,), (n_costs, n)


def _solve_sparse(A: sp.csc_matrix, b: np.ndarray) -> np.ndarray | None:
    """Solve A x = b columnwise; None when A is singular or the solve blows up."""
    try:
        lu = spla.splu(A)
    except RuntimeError:
        return None
    with np.errstate(all="ignore"):
        x = lu.solve(b)
    if not np.all(np.isfinite(x)):
        return None
    return x


def _eval_by_linear_solve(mdp: DiscreteMDP, f: StationaryPolicy) -> CostVector:
    T = _policy_transition(mdp, f)
    _, _, c = _policy_cells(mdp, f)
    A = (sp.eye(mdp.n_states, format="csc") - T.tocsc()).tocsc()
    V = _solve_sparse(A, c.T)
    if V is None:
        raise ValueError(
            "policy evaluation system is singular (a survival-1 cycle); "
            "the policy has infinite cost")
    return CostVector(V[mdp.x0_index, :])


def eval_policy(mdp: DiscreteMDP, f: StationaryPolicy) -> CostVector:
    """Cost vector of a deterministic stationary policy from the initial state.

    Follows the grid trajectory with a running survival product; a revisited
    state closes a cycle whose remaining cost is the geometric series summed
    in closed form.  A cycle with per-cycle survival 1 (all zero waits) has
    infinite cost on every index it accrues, reported as +inf entries.
    Off-grid landings (interpolation weights split between two grid points)
    fall back to the linear solve of the interpolated fixed-point system.
    """
    if f.n_states != mdp.n_states:
        raise ValueError("policy does not match the MDP state grid")
    n_costs = mdp.n_costs
    totals = np.zeros(n_costs)
    disc = 1.0
    idx = mdp.x0_index
    position: dict[int, int] = {}
    step_costs: list[np.ndarray] = []
    step_surv: list[float] = []
    step_disc: list[float] = []
    while True:
        if idx in position:
            # cost of the first pass through the cycle, discounted to its entry
            p = position[idx]
            cycle = np.zeros(n_costs)
            within = 1.0
            for k in range(p, len(step_costs)):
                cycle += within * step_costs[k]
                within *= step_surv[k]
            rho = within
            if rho >= 1.0:
                tail = np.where(cycle > 0.0, math.inf, 0.0)
            else:
                # totals already holds the first pass; add the repeats
                tail = step_disc[p] * cycle * (rho / (1.0 - rho))
            return CostVector(totals + tail)
        q = int(f.flat[idx])
        s = float(mdp.survival[q])
        wl = float(mdp.w_lo[idx, q])
        wh = float(mdp.w_hi[idx, q])
        if s > 0.0 and wl < 1.0 - 1e-12 and wh < 1.0 - 1e-12:
            return _eval_by_linear_solve(mdp, f)
        position[idx] = len(step_costs)
        c = mdp.costs[:, idx, q].copy()
        step_costs.append(c)
        step_surv.append(s)
        step_disc.append(disc)
        totals += disc * c
        disc *= s
        if s == 0.0:
            return CostVector(totals)
        idx = int(mdp.next_lo[idx, q] if wl >= wh else mdp.next_hi[idx, q])


def occupation_measure(mdp: DiscreteMDP, f: StationaryPolicy) -> OccupationMeasure:
    """Occupation measure of a stationary policy by direct sparse linear solve.

    Solves mu = delta_x0 + Q_f^T mu on the grid.  Raises ValueError naming the
    cycle states if the system is singular (a survival-1 cycle, whose
    occupation measure is not finite).
    """
    n = mdp.n_states
    T = _policy_transition(mdp, f)
    e0 = np.zeros(n)
    e0[mdp.x0_index] = 1.0
    A = (sp.eye(n, format="csc") - T.T.tocsc()).tocsc()
    m = _solve_sparse(A, e0)
    if m is None or np.any(m < -1e-9):
        cyc = _unit_cycle_states(mdp, f)
        raise ValueError(
            "occupation measure is not finite: the policy induces a "
            f"survival-1 cycle through grid state indices {cyc}")
    m = np.maximum(m, 0.0)
    mass = np.zeros((n, mdp.n_actions))
    mass[np.arange(n), f.flat] = m
    return OccupationMeasure(mass=mass, total=float(m.sum()))


def _unit_cycle_states(mdp: DiscreteMDP, f: StationaryPolicy) -> list[int]:
    """Best-effort walk from x0 to name a survival-1 cycle."""
    idx = mdp.x0_index
    seen: dict[int, int] = {}
    path: list[int] = []
    for _ in range(mdp.n_states + 1):
        if idx in seen:
            return path[seen[idx]:]
        seen[idx] = len(path)
        path.append(idx)
        q = int(f.flat[idx])
        if mdp.survival[q] == 0.0:
            break
        wl = float(mdp.w_lo[idx, q])
        idx = int(mdp.next_lo[idx, q] if wl >= 0.5 else mdp.next_hi[idx, q])
    return path


def check_characteristic(mdp: DiscreteMDP, mu: OccupationMeasure,
                         f: StationaryPolicy | None = None) -> float:
    """Sup-norm residual of the occupation-measure balance equation.

    Evaluates |mu(x, all actions) - delta_x0(x) - inflow(x)| cellwise over
    grid states, where inflow aggregates survival-weighted interpolation mass
    from every (state, action) cell.  The balance equation does not depend on
    the policy; ``f`` is accepted for interface symmetry and ignored.
    """
    n = mdp.n_states
    out = mu.mass.sum(axis=1).astype(float)
    out[mdp.x0_index] -= 1.0
    inflow = np.zeros(n)
    contrib_lo = (mdp.survival[np.newaxis, :] * mdp.w_lo * mu.mass).ravel()
    contrib_hi = (mdp.survival[np.newaxis, :] * mdp.w_hi * mu.mass).ravel()
    np.add.at(inflow, mdp.next_lo.ravel(), contrib_lo)
    np.add.at(inflow, mdp.next_hi.ravel(), contrib_hi)
    return float(np.max(np.abs(out - inflow)))


def eval_mixture(mdp: DiscreteMDP, m: MixedPolicy) -> CostVector:
    """Weighted sum of the component cost vectors (mixtures are linear)."""
    total = np.zeros(mdp.n_costs)
    for w, f in zip(m.weights, m.policies):
        total = total + w * eval_policy(mdp, f).v
    return CostVector(total)


# ---------------------------------------------------------------------------
# grid-free trajectory oracle


def threshold_rule(problem: ImpulseProblem, xbar: float, action=None):
    """Decision rule 'wait max(xbar - x, 0) then impulse' (never, if xbar=inf)."""
    label = problem.actions[0] if action is None else action

    def rule(x: float):
        if math.isinf(xbar):
            return math.inf, label
        return max(xbar - x, 0.0), label

    return rule


def policy_rule(mdp: DiscreteMDP, f: StationaryPolicy):
    """Decision rule reading a grid policy table at the nearest grid state."""

    def rule(x: float):
        i = int(np.argmin(np.abs(mdp.states - x)))
        t_idx, a_idx = f.choice[i]
        return float(mdp.theta_points[t_idx]), mdp.action_labels[a_idx]

    return rule


def simulate_oracle(problem: ImpulseProblem, policy, horizon: int,
                    mdp: DiscreteMDP | None = None,
                    step: float = 1e-3) -> CostVector:
    """Continuous-time cost of a policy, evaluated along the true flow.

    Sums impulse-by-impulse the discounted stage costs of the original
    problem (impulse times t_i, discount exp(-alpha*t_i), running integrals
    along the flow with no grid involved), truncated after ``horizon``
    impulses.  Truncation stops early once the remaining discount factor
    cannot contribute above double precision; for agreement checks pick the
    horizon so that exp(-alpha*t_N) times the cost scale is below the target
    tolerance.  ``policy`` may be a float threshold (wait max(xbar - x, 0)),
    a callable x -> (theta, action), or a StationaryPolicy with its ``mdp``.
    """
    if horizon < 1:
        raise ValueError("horizon must be >= 1")
    if isinstance(policy, StationaryPolicy):
        if mdp is None:
            raise ValueError("a StationaryPolicy needs the mdp it indexes into")
        rule = policy_rule(mdp, policy)
    elif isinstance(policy, (int, float)):
        rule = threshold_rule(problem, float(policy))
    else:
        rule = policy
    totals = np.zeros(problem.n_costs)
    x = problem.x0
    t = 0.0
    alpha = problem.alpha
    for _ in range(horizon):
        disc = math.exp(-alpha * t)
        if disc < 1e-18:
            break
        theta, a = rule(x)
        for j in range(problem.n_costs):
            totals[j] += disc * stage_cost(problem, x, theta, a, j, step=step)
        if math.isinf(theta):
            break
        t += theta
        x = float(problem.reset(float(problem.flow(x, theta)), a))
    return CostVector(totals)


# ---------------------------------------------------------------------------
# policy table serialization (CLI `eval` interface)


def policy_to_table(mdp: DiscreteMDP, f: StationaryPolicy) -> str:
    """Serialize a policy as text rows: grid state, theta or INF, action label."""
    lines = ["# state theta action"]
    for i in range(mdp.n_states):
        t_idx, a_idx = f.choice[i]
        theta = float(mdp.theta_points[t_idx])
        theta_s = "INF" if math.isinf(theta) else repr(theta)
        lines.append(f"{float(mdp.states[i])!r} {theta_s} {mdp.action_labels[a_idx]}")
    return "\n".join(lines) + "\n"


def policy_from_table(mdp: DiscreteMDP, text: str) -> StationaryPolicy:
    """Parse a policy table; every grid state must get exactly one row.

    Rows are whitespace separated: state, theta (or INF), and an optional
    action label (defaults to the first action).  States and waiting times
    must match grid points within 1e-6 relative.
    """
    flat = np.full(mdp.n_states, -1, dtype=np.intp)
    finite_thetas = mdp.theta_points[:-1]
    for ln, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        parts = line.split()
        if len(parts) not in (2, 3):
            raise ValueError(f"policy table line {ln}: expected 2 or 3 fields")
        x = float(parts[0])
        i = int(np.argmin(np.abs(mdp.states - x)))
        if abs(mdp.states[i] - x) > 1e-6 * (1.0 + abs(x)):
            raise ValueError(
                f"policy table line {ln}: state {x} is not a grid point")
        if parts[1].upper() in ("INF", "INFINITY"):
            t_idx = mdp.theta_points.size - 1
        else:
            theta = float(parts[1])
            if math.isinf(theta):
                t_idx = mdp.theta_points.size - 1
            else:
                t_idx = int(np.argmin(np.abs(finite_thetas - theta)))
                if abs(finite_thetas[t_idx] - theta) > 1e-6 * (1.0 + abs(theta)):
                    raise ValueError(
                        f"policy table line {ln}: theta {theta} is not on the grid")
        label = parts[2] if len(parts) == 3 else mdp.action_labels[0]
        if label not in mdp.action_labels:
            raise ValueError(f"policy table line {ln}: unknown action '{label}'")
        a_idx = mdp.action_labels.index(label)
        flat[i] = t_idx * mdp.n_labels + a_idx
    if np.any(flat < 0):
        missing = int(np.argmax(flat < 0))
        raise ValueError(
            f"policy table is missing a row for grid state {mdp.states[missing]}")
    return StationaryPolicy.from_flat(flat, mdp.n_labels)
