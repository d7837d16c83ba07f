"""Desk-scale brute-force oracles and the verification battery.

Everything here deliberately avoids the factor recursions of
:mod:`riskcmdp.evaluate`: risk values are expanded as explicit sums
over complete trajectories, optimizers enumerate policies exhaustively,
and epoch LPs are checked against full vertex enumeration.  Caps are
hard errors, never silent truncation.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass

import numpy as np

from . import evaluate, lp, model
from .model import CONSTRAINT, MAXIMIZE, MINIMIZE, REWARD, Policy, RiskCmdpInstance

PATH_CAP = 10_000_000
CORNER_CAP = 1_000_000
GRID_CAP = 10_000_000


class OracleCapExceeded(RuntimeError):
    """An enumeration would exceed its hard cap; the oracle refuses to run."""


@dataclass(frozen=True)
class PathEnumeration:
    """All trajectories of an instance under one policy and cost choice.

    Each entry is ``(trajectory, probability, exponentiated cost)``
    where the trajectory interleaves state and action indices
    ``(x_1, a_1, ..., x_{T-1}, a_{T-1}, x_T)`` and the exponentiated
    cost includes the terminal cost.
    """

    cost: str
    entries: tuple[tuple[tuple[int, ...], float, float], ...]

    def total_weight(self) -> float:
        return sum(w for _, w, _ in self.entries)

    def value(self) -> float:
        return sum(w * e for _, w, e in self.entries)


def _structural_path_count(instance: RiskCmdpInstance) -> int:
    """Number of (state, action) trajectories, ignoring probabilities."""
    counts = np.ones(instance.n_states[-1], dtype=np.int64)
    for t in range(instance.horizon - 2, -1, -1):
        total = int(counts.sum())
        counts = instance.n_actions[t] * total
    return int(counts.sum())


def _require_path_budget(instance: RiskCmdpInstance) -> None:
    count = _structural_path_count(instance)
    if count > PATH_CAP:
        raise OracleCapExceeded(f"{count} trajectories exceed the cap of {PATH_CAP}")


def enumerate_paths(instance: RiskCmdpInstance, cost: str, policy: Policy) -> PathEnumeration:
    """Materialize every trajectory with its probability and exponentiated cost."""
    _require_path_budget(instance)
    scaled = instance.scaled(cost)
    alpha = instance.spec(cost).alpha
    horizon = instance.horizon
    entries = []

    def extend(t: int, x: int, prefix: tuple[int, ...], prob: float, acc: float) -> None:
        if t == horizon - 1:
            entries.append((prefix, prob, math.exp(acc + scaled.terminal[x])))
            return
        for a in range(int(instance.n_actions[t][x])):
            p_a = prob * policy.rules[t][x, a]
            for y in range(instance.n_states[t + 1]):
                p = p_a * instance.kernel[t][x, a, y]
                extend(t + 1, y, prefix + (a, y), p, acc + scaled.running[t][x, a, y])

    for x in range(instance.n_states[0]):
        extend(0, x, (x,), float(alpha[x]), 0.0)
    return PathEnumeration(cost=cost, entries=tuple(entries))


def enumerate_paths_eval(instance: RiskCmdpInstance, cost: str, policy: Policy) -> float:
    """Exact risk value as the explicit finite sum over all trajectories."""
    _require_path_budget(instance)
    scaled = instance.scaled(cost)
    alpha = instance.spec(cost).alpha
    horizon = instance.horizon

    def tail(t: int, x: int, prob: float, acc: float) -> float:
        if prob == 0.0:
            return 0.0
        if t == horizon - 1:
            return prob * math.exp(acc + scaled.terminal[x])
        total = 0.0
        for a in range(int(instance.n_actions[t][x])):
            p_a = prob * policy.rules[t][x, a]
            if p_a == 0.0:
                continue
            for y in range(instance.n_states[t + 1]):
                total += tail(
                    t + 1,
                    y,
                    p_a * instance.kernel[t][x, a, y],
                    acc + scaled.running[t][x, a, y],
                )
        return total

    return sum(tail(0, x, float(alpha[x]), 0.0) for x in range(instance.n_states[0]))


def enumerate_forward_factor(
    instance: RiskCmdpInstance, cost: str, policy: Policy, t: int, x: int
) -> float:
    """Prefix-path expansion of ``theta_t(x)`` (t is 1-based)."""
    _require_path_budget(instance)
    scaled = instance.scaled(cost)
    alpha = instance.spec(cost).alpha
    if t == 1:
        return float(alpha[x])

    def prefix(k: int, y: int, prob: float, acc: float) -> float:
        if prob == 0.0:
            return 0.0
        if k == t - 1:
            return prob * math.exp(acc) if y == x else 0.0
        total = 0.0
        for a in range(int(instance.n_actions[k][y])):
            p_a = prob * policy.rules[k][y, a]
            if p_a == 0.0:
                continue
            for z in range(instance.n_states[k + 1]):
                total += prefix(
                    k + 1, z, p_a * instance.kernel[k][y, a, z], acc + scaled.running[k][y, a, z]
                )
        return total

    return sum(prefix(0, y, float(alpha[y]), 0.0) for y in range(instance.n_states[0]))


def enumerate_backward_factor(
    instance: RiskCmdpInstance, cost: str, policy: Policy, t: int, x: int, a: int
) -> float:
    """Suffix-path expansion of ``Q_t(x, a)`` (t is 1-based)."""
    _require_path_budget(instance)
    scaled = instance.scaled(cost)
    horizon = instance.horizon

    def suffix(k: int, y: int, acc: float) -> float:
        # expectation over the remaining trajectory, decisions from k+1 on
        if k == horizon - 1:
            return math.exp(acc + scaled.terminal[y])
        total = 0.0
        for b in range(int(instance.n_actions[k][y])):
            p_b = policy.rules[k][y, b]
            if p_b == 0.0:
                continue
            for z in range(instance.n_states[k + 1]):
                p = p_b * instance.kernel[k][y, b, z]
                if p == 0.0:
                    continue
                total += p * suffix(k + 1, z, acc + scaled.running[k][y, b, z])
        return total

    total = 0.0
    for z in range(instance.n_states[t]):
        p = instance.kernel[t - 1][x, a, z]
        if p == 0.0:
            continue
        total += p * suffix(t, z, scaled.running[t - 1][x, a, z])
    return total


def splice_policies(base: Policy, other: Policy, t: int) -> Policy:
    """Replace the epoch-t rule of ``base`` with ``other``'s (t is 1-based)."""
    rules = list(r.copy() for r in base.rules)
    rules[t - 1] = other.rules[t - 1].copy()
    return Policy(tuple(rules))


# ---------------------------------------------------------------------------
# Exhaustive optimizers
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class SearchResult:
    policy: Policy | None
    value: float
    feasible_found: bool
    n_evaluated: int


def _feasible(instance: RiskCmdpInstance, j_c: float, tol: float = 1e-9) -> bool:
    return j_c <= instance.bound * (1.0 + tol)


def deterministic_policies(instance: RiskCmdpInstance):
    """Yield every deterministic Markovian policy; hard-capped."""
    per_rule = [
        int(instance.n_actions[t][x])
        for t in range(instance.horizon - 1)
        for x in range(instance.n_states[t])
    ]
    total = math.prod(per_rule)
    if total > CORNER_CAP:
        raise OracleCapExceeded(f"{total} deterministic policies exceed the cap of {CORNER_CAP}")
    for choice in itertools.product(*(range(n) for n in per_rule)):
        rules = []
        pos = 0
        for t in range(instance.horizon - 1):
            rule = np.zeros(instance.action_mask[t].shape)
            for x in range(instance.n_states[t]):
                rule[x, choice[pos]] = 1.0
                pos += 1
            rules.append(rule)
        yield Policy(tuple(rules))


def corner_policy_search(instance: RiskCmdpInstance) -> SearchResult:
    """Exhaustive search over deterministic Markovian policies.

    Evaluation reuses the exact factor-based risk value, which is itself
    validated against path enumeration; the optimizer route stays
    independent of the iterative solver.
    """
    best_policy = None
    best_value = math.nan
    n_eval = 0
    for policy in deterministic_policies(instance):
        n_eval += 1
        if not _feasible(instance, evaluate.evaluate_risk(instance, CONSTRAINT, policy)):
            continue
        value = evaluate.evaluate_risk(instance, REWARD, policy)
        if best_policy is None or instance.better(value, best_value):
            best_policy, best_value = policy, value
    return SearchResult(
        policy=best_policy,
        value=best_value,
        feasible_found=best_policy is not None,
        n_evaluated=n_eval,
    )


def _simplex_grid(n: int, resolution: int) -> list[tuple[float, ...]]:
    """All points of the step-1/resolution grid on the (n-1)-simplex."""
    points = []
    for cuts in itertools.combinations(range(resolution + n - 1), n - 1):
        parts = []
        prev = -1
        for c in cuts:
            parts.append(c - prev - 1)
            prev = c
        parts.append(resolution + n - 2 - prev)
        points.append(tuple(p / resolution for p in parts))
    return points


def randomized_grid_search(instance: RiskCmdpInstance, resolution: int) -> SearchResult:
    """Exhaustive search over simplex-grid policies (corners always included)."""
    rule_index = [
        (t, x)
        for t in range(instance.horizon - 1)
        for x in range(instance.n_states[t])
    ]
    grids = [
        _simplex_grid(int(instance.n_actions[t][x]), resolution) for t, x in rule_index
    ]
    total = math.prod(len(g) for g in grids)
    if total > GRID_CAP:
        raise OracleCapExceeded(f"{total} grid policies exceed the cap of {GRID_CAP}")

    best_policy = None
    best_value = math.nan
    n_eval = 0
    for combo in itertools.product(*grids):
        rules = [np.zeros(instance.action_mask[t].shape) for t in range(instance.horizon - 1)]
        for (t, x), probs in zip(rule_index, combo):
            rules[t][x, : len(probs)] = probs
        policy = Policy(tuple(rules))
        n_eval += 1
        if not _feasible(instance, evaluate.evaluate_risk(instance, CONSTRAINT, policy)):
            continue
        value = evaluate.evaluate_risk(instance, REWARD, policy)
        if best_policy is None or instance.better(value, best_value):
            best_policy, best_value = policy, value
    return SearchResult(
        policy=best_policy,
        value=best_value,
        feasible_found=best_policy is not None,
        n_evaluated=n_eval,
    )


def enumerate_epoch_lp_optimum(epoch_lp: lp.EpochLp, tol: float = 1e-9) -> float | None:
    """Optimal value of one epoch LP by enumerating every basic solution.

    Basic solutions are the deterministic corners plus, for each state
    and action pair, the mixture that makes the coupling row exactly
    bind.  Returns None when infeasible.
    """
    counts = epoch_lp.n_actions
    bound = epoch_lp.bound
    maximize = epoch_lp.sense == MAXIMIZE
    best: float | None = None

    def consider(value: float) -> None:
        nonlocal best
        if best is None or (value > best if maximize else value < best):
            best = value

    choices = [range(int(c)) for c in counts]
    scale = max(1.0, abs(bound)) if np.isfinite(bound) else 1.0
    for corner in itertools.product(*choices):
        o = sum(epoch_lp.objective[x, a] for x, a in enumerate(corner))
        g = sum(epoch_lp.constraint[x, a] for x, a in enumerate(corner))
        if np.isfinite(bound) and g > bound + tol * scale:
            continue
        consider(float(o))
        if not np.isfinite(bound):
            continue
        # mixtures: replace state x's choice by a blend of actions (a, b)
        for x in range(len(counts)):
            g_rest = g - epoch_lp.constraint[x, corner[x]]
            o_rest = o - epoch_lp.objective[x, corner[x]]
            for a in range(int(counts[x])):
                for b in range(a + 1, int(counts[x])):
                    ga, gb = epoch_lp.constraint[x, a], epoch_lp.constraint[x, b]
                    if abs(ga - gb) <= 1e-15:
                        continue
                    # weight w on action a so that g_rest + w ga + (1-w) gb = bound
                    w = (bound - g_rest - gb) / (ga - gb)
                    if not 0.0 <= w <= 1.0:
                        continue
                    consider(float(o_rest + w * epoch_lp.objective[x, a] + (1 - w) * epoch_lp.objective[x, b]))
    return best


# ---------------------------------------------------------------------------
# Random desk-scale instances
# ---------------------------------------------------------------------------


def random_instance_config(
    rng: np.random.Generator,
    *,
    max_states: int = 4,
    max_actions: int = 3,
    max_horizon: int = 5,
    gammas=(-1.0, 1.0),
    betas=(0.5, 1.0),
    sense: str | None = None,
    bound: float | str = "inf",
    structural_cap: int | None = None,
) -> dict:
    """Draw a random instance description with costs in [-1, 1].

    Kernels are strictly positive (Dirichlet rows) so every state stays
    reachable under interior policies.  ``structural_cap`` rejects and
    redraws shapes whose trajectory count would slow path oracles down.
    """
    while True:
        horizon = int(rng.integers(2, max_horizon + 1))
        n_states = [int(rng.integers(1, max_states + 1)) for _ in range(horizon)]
        n_actions = [
            [int(rng.integers(1, max_actions + 1)) for _ in range(n_states[t])]
            for t in range(horizon - 1)
        ]
        count = np.ones(n_states[-1], dtype=np.int64)
        for t in range(horizon - 2, -1, -1):
            total = int(count.sum())
            count = np.array([n * total for n in n_actions[t]], dtype=np.int64)
        if structural_cap is None or int(count.sum()) <= structural_cap:
            break

    def cost_block() -> dict:
        running = [
            [
                [
                    rng.uniform(-1.0, 1.0, size=n_states[t + 1]).tolist()
                    for _ in range(n_actions[t][x])
                ]
                for x in range(n_states[t])
            ]
            for t in range(horizon - 1)
        ]
        return {
            "running": running,
            "terminal": rng.uniform(-1.0, 1.0, size=n_states[-1]).tolist(),
            "gamma": float(rng.choice(gammas)),
            "beta": float(rng.choice(betas)),
            "alpha": rng.dirichlet(np.ones(n_states[0])).tolist(),
        }

    kernel = [
        [
            [rng.dirichlet(np.ones(n_states[t + 1])).tolist() for _ in range(n_actions[t][x])]
            for x in range(n_states[t])
        ]
        for t in range(horizon - 1)
    ]
    return {
        "horizon": horizon,
        "states": [[str(i) for i in range(n)] for n in n_states],
        "kernel": kernel,
        "reward": cost_block(),
        "constraint": cost_block(),
        "bound": bound,
        "sense": sense or str(rng.choice([MAXIMIZE, MINIMIZE])),
    }


def random_instance(rng: np.random.Generator, **kwargs) -> RiskCmdpInstance:
    return model.build_instance(random_instance_config(rng, **kwargs))


def constrain_instance(
    instance: RiskCmdpInstance, rng: np.random.Generator, pinch: float = 0.5
) -> RiskCmdpInstance | None:
    """Re-bound an instance so the constraint bites at the unconstrained optimum.

    Places the bound a fraction ``pinch`` of the way from the cheapest
    achievable constraint value to the unconstrained optimum's; returns
    None when no deterministic policy separates the two.
    """
    config = model.instance_to_config(instance)
    config["bound"] = "inf"
    free = model.build_instance(config)
    dp = evaluate.unconstrained_dp(free, REWARD)
    j_c_at_opt = evaluate.evaluate_risk(free, CONSTRAINT, dp.greedy)
    low = corner_policy_search_min_constraint(free)
    if j_c_at_opt - low <= 1e-9:
        return None
    config["bound"] = low + pinch * (j_c_at_opt - low)
    return model.build_instance(config)


def corner_policy_search_min_constraint(instance: RiskCmdpInstance) -> float:
    """Smallest constraint value over deterministic policies (not a lower bound
    over randomized policies in general, but sufficient to place a biting bound)."""
    return min(
        evaluate.evaluate_risk(instance, CONSTRAINT, policy)
        for policy in deterministic_policies(instance)
    )
