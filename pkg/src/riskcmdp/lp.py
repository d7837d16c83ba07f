"""Per-policy linear program, decomposed into independent per-epoch LPs.

For a fixed policy's factors the joint program over all candidate
policies separates exactly: the epoch-t objective and constraint touch
only the epoch-t decision rule.  Each epoch LP is

    opt   sum_{x,a} o(x,a) d(x,a)      o(x,a) = theta_r,t(x) Q_r,t(x,a)
    s.t.  sum_{x,a} g(x,a) d(x,a) <= B g(x,a) = theta_c,t(x) Q_c,t(x,a)
          sum_a d(x,a) = 1 for every state x,  d >= 0,

a multiple-choice structure with one coupling row.  It is solved by a
self-contained dense tableau simplex with Bland's anti-cycling rule;
the initial basis takes the cheapest action per state (by ``g``) plus
the coupling slack, which is feasible whenever the LP is.  A basic
optimum randomizes in at most one state between at most two actions.

Variable order is deterministic by default; passing an RNG permutes the
Bland priority so ties across multiple optima resolve randomly.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .model import CONSTRAINT, MAXIMIZE, MINIMIZE, REWARD, Policy, RiskCmdpInstance
from .evaluate import BackwardFactors, FactorSet, ForwardFactors, f_linear, factor_set

OPTIMAL = "optimal"
INFEASIBLE = "infeasible"

DEFAULT_TOL = 1e-9
_PIVOT_BUDGET = 10_000


@dataclass(frozen=True)
class EpochLp:
    """Coefficients of one epoch's LP over the product of state simplices."""

    epoch: int
    objective: np.ndarray
    constraint: np.ndarray
    bound: float
    sense: str
    n_actions: np.ndarray


@dataclass(frozen=True)
class LpSolution:
    """A vertex solution of one epoch LP (or infeasibility)."""

    status: str
    rule: np.ndarray | None
    value: float
    constraint_value: float
    active: bool


@dataclass(frozen=True)
class PolicyLpResult:
    """Solution of the full per-policy program, assembled epoch by epoch.

    ``input_values[t-1]`` is the epoch-t factor contraction of the input
    policy itself (all equal to its risk value, up to roundoff), kept so
    improvement and residual checks use identical arithmetic.
    """

    status: str
    policy: Policy | None
    epoch_values: np.ndarray | None
    epoch_constraints: np.ndarray | None
    epoch_active: np.ndarray | None
    infeasible_epoch: int | None
    input_values: np.ndarray


def build_epoch_lp(
    t: int,
    theta_r: ForwardFactors,
    q_r: BackwardFactors,
    theta_c: ForwardFactors,
    q_c: BackwardFactors,
    bound: float,
    sense: str,
    n_actions: np.ndarray,
) -> EpochLp:
    """Assemble epoch-t coefficients from reward and constraint factors."""
    if not 1 <= t <= len(q_r.per_epoch):
        raise ValueError(f"epoch {t} outside 1..{len(q_r.per_epoch)}")
    objective = theta_r.per_epoch[t - 1][:, None] * q_r.per_epoch[t - 1]
    constraint = theta_c.per_epoch[t - 1][:, None] * q_c.per_epoch[t - 1]
    if np.any(constraint < 0):
        raise ValueError("constraint coefficients must be nonnegative")
    return EpochLp(
        epoch=t,
        objective=objective,
        constraint=constraint,
        bound=bound,
        sense=sense,
        n_actions=np.asarray(n_actions, dtype=np.int64),
    )


def format_epoch_lp(lp: EpochLp) -> str:
    """Plain-text tabular dump for external cross-checking."""
    lines = [
        f"epoch {lp.epoch}  sense={lp.sense}  bound={lp.bound!r}",
        f"{'state':>5} {'action':>6} {'objective':>24} {'constraint':>24}",
    ]
    for x, count in enumerate(lp.n_actions):
        for a in range(int(count)):
            lines.append(
                f"{x:>5} {a:>6} {lp.objective[x, a]:>24.17g} {lp.constraint[x, a]:>24.17g}"
            )
    lines.append("one simplex equality row per state; coupling row: sum g*d <= bound")
    return "\n".join(lines)


def _bland_min(candidates: np.ndarray, priority: np.ndarray) -> int:
    """Smallest-priority candidate (Bland's rule under a variable order)."""
    return int(candidates[np.argmin(priority[candidates])])


def _check_vertex_structure(rule: np.ndarray, n_actions: np.ndarray, tol: float) -> None:
    """Basic solutions randomize in at most one state between at most two actions."""
    support = (rule > tol).sum(axis=1)
    fractional = np.flatnonzero(support > 1)
    if fractional.size > 1 or np.any(support > 2):
        raise RuntimeError(
            f"non-vertex epoch LP solution: support sizes {support.tolist()}"
        )


def solve_epoch_lp(
    lp: EpochLp,
    tol: float = DEFAULT_TOL,
    order: np.ndarray | None = None,
) -> LpSolution:
    """Solve one epoch LP to a vertex, or report infeasibility.

    ``order`` permutes the flat variable indices used as Bland priority;
    the default is the natural (state, action) order.
    """
    n_states = len(lp.n_actions)
    counts = lp.n_actions
    owner = np.repeat(np.arange(n_states), counts)
    mask = np.arange(int(counts.max()))[None, :] < counts[:, None]
    o_orig = lp.objective[mask]
    g = lp.constraint[mask]
    n = len(o_orig)
    o = o_orig if lp.sense == MAXIMIZE else -o_orig

    priority = np.empty(n + 1, dtype=np.int64)
    if order is None:
        priority[:n] = np.arange(n)
    else:
        if sorted(order.tolist()) != list(range(n)):
            raise ValueError("order must be a permutation of the variable indices")
        priority[:n][order] = np.arange(n)
    priority[n] = n  # slack has the lowest Bland priority

    if np.isinf(lp.bound):
        z = _per_state_argbest(o, owner, n_states, priority)
    else:
        z = _coupled_simplex(o, g, owner, n_states, lp.bound, tol, priority)
        if z is None:
            return LpSolution(
                status=INFEASIBLE,
                rule=None,
                value=np.nan,
                constraint_value=np.nan,
                active=False,
            )

    rule = np.zeros(lp.objective.shape)
    rule[mask] = z
    rule = np.maximum(rule, 0.0)
    rule /= rule.sum(axis=1, keepdims=True)
    _check_vertex_structure(rule, counts, 10 * tol)

    value = float((lp.objective * rule).sum())
    constraint_value = float((lp.constraint * rule).sum())
    scale = max(1.0, abs(lp.bound)) if np.isfinite(lp.bound) else 1.0
    if np.isfinite(lp.bound) and constraint_value > lp.bound + 10 * tol * scale:
        raise RuntimeError(
            f"epoch LP solution violates its coupling row: {constraint_value} > {lp.bound}"
        )
    active = np.isfinite(lp.bound) and constraint_value >= lp.bound - tol * scale
    return LpSolution(
        status=OPTIMAL,
        rule=rule,
        value=value,
        constraint_value=constraint_value,
        active=bool(active),
    )


def _per_state_argbest(o: np.ndarray, owner: np.ndarray, n_states: int, priority) -> np.ndarray:
    """Unbounded coupling row: each state independently takes its best action."""
    z = np.zeros(len(o))
    for x in range(n_states):
        idx = np.flatnonzero(owner == x)
        ties = idx[o[idx] >= o[idx].max()]
        z[_bland_min(ties, priority)] = 1.0
    return z


def _coupled_simplex(o, g, owner, n_states, bound, tol, priority):
    """Dense tableau simplex; returns variable values or None when infeasible."""
    n = len(o)
    slack = n
    basis = np.empty(n_states + 1, dtype=np.int64)
    for x in range(n_states):
        idx = np.flatnonzero(owner == x)
        gmin = g[idx].min()
        ties = idx[g[idx] <= gmin]
        basis[x] = _bland_min(ties, priority)
    base_g = float(g[basis[:n_states]].sum())
    feas_slack = tol * max(1.0, abs(bound))
    if base_g > bound + feas_slack:
        return None
    basis[n_states] = slack

    m = n_states + 1
    rhs = n + 1
    tab = np.zeros((m + 1, n + 2))
    tab[owner, np.arange(n)] = 1.0
    tab[:n_states, rhs] = 1.0
    tab[n_states, :n] = g - g[basis[owner]]
    tab[n_states, slack] = 1.0
    tab[n_states, rhs] = bound - base_g
    # z-row holds (z_j - c_j); entering while any entry is below -tol
    tab[m, :n] = o[basis[owner]] - o
    tab[m, rhs] = o[basis[:n_states]].sum()

    for _ in range(_PIVOT_BUDGET):
        eligible = np.flatnonzero(tab[m, : n + 1] < -tol)
        if eligible.size == 0:
            break
        enter = _bland_min(eligible, priority)
        col = tab[:m, enter]
        positive = col > tol
        if not positive.any():
            raise RuntimeError("unbounded epoch LP; coefficients are malformed")
        ratios = np.full(m, np.inf)
        ratios[positive] = tab[:m, rhs][positive] / col[positive]
        best = ratios.min()
        ties = np.flatnonzero(ratios <= best + 1e-12 * max(1.0, best))
        leave = int(ties[np.argmin(priority[basis[ties]])])
        pivot_row = tab[leave] / tab[leave, enter]
        column = tab[:, enter].copy()
        column[leave] = 0.0
        tab -= np.outer(column, pivot_row)
        tab[leave] = pivot_row
        basis[leave] = enter
    else:
        raise RuntimeError("simplex pivot budget exceeded despite Bland's rule")

    z = np.zeros(n + 1)
    z[basis] = tab[:m, rhs]
    if z.min() < -10 * tol:
        raise RuntimeError(f"negative basic value {z.min()} in epoch LP solution")
    return z[:n]


def solve_lp_of_policy(
    instance: RiskCmdpInstance,
    policy: Policy,
    *,
    factors: tuple[FactorSet, FactorSet] | None = None,
    tol: float = DEFAULT_TOL,
    rng: np.random.Generator | None = None,
) -> PolicyLpResult:
    """Solve every epoch LP built from one policy's factors.

    ``factors`` may pass precomputed (reward, constraint) factor sets of
    ``policy``; ``rng`` enables randomized vertex selection among ties.
    """
    if factors is None:
        factors = (
            factor_set(instance, REWARD, policy),
            factor_set(instance, CONSTRAINT, policy),
        )
    fr, fc = factors
    horizon = instance.horizon
    input_values = np.array(
        [f_linear(t, policy, fr.forward, fr.backward) for t in range(1, horizon)]
    )

    rules = []
    values = np.empty(horizon - 1)
    constraints = np.empty(horizon - 1)
    active = np.empty(horizon - 1, dtype=bool)
    for t in range(1, horizon):
        lp = build_epoch_lp(
            t,
            fr.forward,
            fr.backward,
            fc.forward,
            fc.backward,
            instance.bound,
            instance.sense,
            instance.n_actions[t - 1],
        )
        order = None
        if rng is not None:
            order = rng.permutation(int(lp.n_actions.sum()))
        sol = solve_epoch_lp(lp, tol=tol, order=order)
        if sol.status == INFEASIBLE:
            return PolicyLpResult(
                status=INFEASIBLE,
                policy=None,
                epoch_values=None,
                epoch_constraints=None,
                epoch_active=None,
                infeasible_epoch=t,
                input_values=input_values,
            )
        rules.append(sol.rule)
        values[t - 1] = sol.value
        constraints[t - 1] = sol.constraint_value
        active[t - 1] = sol.active
    return PolicyLpResult(
        status=OPTIMAL,
        policy=Policy(tuple(rules)),
        epoch_values=values,
        epoch_constraints=constraints,
        epoch_active=active,
        infeasible_epoch=None,
        input_values=input_values,
    )
