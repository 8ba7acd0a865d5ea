"""Bellman solver for the multiplier-modified unconstrained problem.

For a fixed nonnegative multiplier vector g the combined one-step cost is
cost_0 + sum_j g_j cost_j, and the value function solves

    W(x) = min over actions (theta, a) of
           combined_cost(x, (theta, a)) + survival * W(next state),

with W = 0 at the cemetery.  Successive approximation from W = 0 produces
pointwise nondecreasing iterates (all quantities are nonnegative and the
backup is monotone, exactly so in floating point), which doubles as a runtime
sanity check.  Each sweep is a Jacobi iteration reading only the previous
iterate, so sweeps are order-independent and could be evaluated in parallel;
the vectorized numpy kernels below already have that structure.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .model import DiscreteMDP


@dataclass(frozen=True)
class ValueFn:
    """Grid-indexed value function; the cemetery value is implicitly 0."""

    values: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "values", np.asarray(self.values, dtype=float))

    @staticmethod
    def zeros(mdp: DiscreteMDP) -> "ValueFn":
        return ValueFn(np.zeros(mdp.n_states))


@dataclass(frozen=True)
class StationaryPolicy:
    """Deterministic stationary strategy: one (theta index, label index) per state."""

    choice: np.ndarray  # (n_states, 2) int
    n_labels: int

    def __post_init__(self):
        object.__setattr__(self, "choice", np.asarray(self.choice, dtype=np.intp))

    @staticmethod
    def from_flat(flat: np.ndarray, n_labels: int) -> "StationaryPolicy":
        flat = np.asarray(flat, dtype=np.intp)
        return StationaryPolicy(
            np.stack([flat // n_labels, flat % n_labels], axis=1), n_labels)

    @property
    def flat(self) -> np.ndarray:
        """Flattened action indices (theta major, label minor)."""
        return self.choice[:, 0] * self.n_labels + self.choice[:, 1]

    @property
    def n_states(self) -> int:
        return self.choice.shape[0]

    def __eq__(self, other) -> bool:
        return (isinstance(other, StationaryPolicy)
                and self.n_labels == other.n_labels
                and np.array_equal(self.choice, other.choice))

    def __hash__(self) -> int:
        return hash((self.n_labels, self.choice.tobytes()))


@dataclass(frozen=True)
class BellmanConfig:
    """Stopping parameters for successive approximation.

    ``tolerance`` is the sup-norm change threshold; ``argmin_slack`` is the
    relative slack used by :func:`default_slack` when extracting near
    minimizers (absolute slack per state is argmin_slack * (1 + W(x)), so the
    extraction is scale-free).
    """

    tolerance: float = 1e-9
    max_iterations: int = 100_000
    argmin_slack: float = 1e-7

    def __post_init__(self):
        if self.tolerance <= 0.0:
            raise ValueError("tolerance must be > 0")
        if self.max_iterations < 1:
            raise ValueError("max_iterations must be >= 1")
        if self.argmin_slack < 0.0:
            raise ValueError("argmin_slack must be >= 0")


@dataclass(frozen=True)
class MinimizerSet:
    """Per-state action indices achieving the Bellman minimum within a slack."""

    sets: tuple  # tuple of sorted int arrays, one per grid state

    def __len__(self) -> int:
        return len(self.sets)

    def max_size(self) -> int:
        return max(s.size for s in self.sets)


@dataclass(frozen=True)
class BellmanSolution:
    """Converged value function with its greedy policy and iteration trace."""

    values: ValueFn
    policy: StationaryPolicy
    iterations: int
    converged: bool
    residual: float
    trace: tuple  # (iteration, sup-norm change) pairs

    @property
    def W(self) -> np.ndarray:
        return self.values.values


def _check_multipliers(mdp: DiscreteMDP, g) -> np.ndarray:
    g = np.atleast_1d(np.asarray(g, dtype=float))
    if g.size != mdp.n_constraints:
        raise ValueError(
            f"expected {mdp.n_constraints} multipliers, got {g.size}")
    if np.any(g < 0.0):
        raise ValueError(f"multipliers must be nonnegative, got {g}")
    return g


def combined_cost(mdp: DiscreteMDP, g) -> np.ndarray:
    """cost_0 + sum_j g_j cost_j as a (n_states, n_actions) table."""
    g = _check_multipliers(mdp, g)
    out = mdp.costs[0].copy()
    for j, gj in enumerate(g):
        if gj != 0.0:
            out += gj * mdp.costs[1 + j]
    return out


def _q_table(mdp: DiscreteMDP, cost: np.ndarray, W: np.ndarray) -> np.ndarray:
    return cost + mdp.expected_next_value(W)


def bellman_backup(mdp: DiscreteMDP, W: ValueFn, g) -> tuple[ValueFn, StationaryPolicy]:
    """One Bellman backup; ties break toward the smallest action index.

    The action order is theta ascending then label order, so ties prefer the
    shortest waiting time (argmin picks the first minimizer).
    """
    q = _q_table(mdp, combined_cost(mdp, g), W.values)
    flat = q.argmin(axis=1)
    new = q[np.arange(mdp.n_states), flat]
    return ValueFn(new), StationaryPolicy.from_flat(flat, mdp.n_labels)


def residual(mdp: DiscreteMDP, W: ValueFn, g) -> float:
    """Sup-norm of backup(W) - W."""
    q = _q_table(mdp, combined_cost(mdp, g), W.values)
    return float(np.max(np.abs(q.min(axis=1) - W.values)))


def solve_W(mdp: DiscreteMDP, g, cfg: BellmanConfig = BellmanConfig(),
            on_iterate=None) -> BellmanSolution:
    """Successive approximation from W = 0 until the sup-norm change is small.

    Returns the last iterate with its greedy policy.  Iterates are pointwise
    nondecreasing; a decrease beyond floating round-off raises RuntimeError
    since it indicates corrupted inputs.  When max_iterations is hit with the
    change still above tolerance the solution is returned flagged
    ``converged=False`` (the backup is not a uniform contraction when
    zero-wait actions survive with weight 1; positive impulse costs make such
    loops non-optimal, and this flag guards pathological inputs).
    ``on_iterate(k, W_k)`` is called with each new iterate when given.
    """
    cost = combined_cost(mdp, g)
    W = np.zeros(mdp.n_states)
    sup_change = math.inf
    trace = []
    iterations = 0
    if on_iterate is not None:
        on_iterate(0, W.copy())
    for k in range(1, cfg.max_iterations + 1):
        q = _q_table(mdp, cost, W)
        W_new = q.min(axis=1)
        if np.any(W_new < W):
            i = int(np.argmax(W - W_new))
            raise RuntimeError(
                f"value iteration decreased at state index {i} "
                f"({W[i]!r} -> {W_new[i]!r}); inputs are inconsistent")
        sup_change = float(np.max(W_new - W))
        iterations = k
        trace.append((k, sup_change))
        W = W_new
        if on_iterate is not None:
            on_iterate(k, W.copy())
        if sup_change <= cfg.tolerance:
            break
    converged = sup_change <= cfg.tolerance
    q = _q_table(mdp, cost, W)
    flat = q.argmin(axis=1)
    return BellmanSolution(
        values=ValueFn(W), policy=StationaryPolicy.from_flat(flat, mdp.n_labels),
        iterations=iterations, converged=converged, residual=sup_change,
        trace=tuple(trace))


def default_slack(W: ValueFn, rel: float = 1e-7) -> np.ndarray:
    """Per-state absolute slack rel * (1 + W(x)) for minimizer extraction."""
    return rel * (1.0 + W.values)


def argmin_set(mdp: DiscreteMDP, W: ValueFn, g, slack) -> MinimizerSet:
    """All actions within ``slack`` of the per-state Bellman minimum.

    ``slack`` may be a scalar or a per-state array of absolute slacks; the
    strict argmin is always included.
    """
    q = _q_table(mdp, combined_cost(mdp, g), W.values)
    m = q.min(axis=1)
    thr = m + np.asarray(slack, dtype=float)
    sets = tuple(np.nonzero(q[i] <= thr[i])[0] for i in range(mdp.n_states))
    return MinimizerSet(sets)
