"""Global solver: random restarts interleaved with LP-guided local improvement.

Each iterate either restarts at a policy drawn uniformly at random
(probability ``w/k``) or moves the current policy a diminishing step
toward a solution of its per-policy LP.  Iterates with constraint value
above the bound are replaced by fresh random policies.  The best
feasible policy seen so far is kept; both the iterate and the LP
solution computed during a local step are checked against the exact
feasibility gate before they can become the incumbent, so the incumbent
is always a genuinely feasible policy with exactly evaluated values.

A policy solving its own LP cannot be improved by any single-epoch
deviation; the fixed-point residual (LP optimum minus current value,
oriented by sense) certifies how far the incumbent is from that set.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from . import lp as lp_mod
from .evaluate import FactorSet, backward_factors, factor_set, risk_value_from_backward
from .model import (
    CONSTRAINT,
    CORNER,
    INTERIOR,
    MAXIMIZE,
    REWARD,
    Policy,
    RiskCmdpInstance,
    random_policy,
)


class LpInfeasibleError(RuntimeError):
    """The per-policy LP has no feasible point; the residual is undefined."""


@dataclass
class GrcConfig:
    """Run parameters; defaults favor reproducibility over tuning.

    The step size is ``step_c / (step_k0 + k)``, which diverges in sum
    while its squares converge; ``step_c < step_k0 + 1`` keeps every
    step inside (0, 1).  Restart probability at iterate k is
    ``min(1, restart_weight / k)``.
    """

    iterations: int = 5000
    restart_weight: float = 5.0
    step_c: float = 1.0
    step_k0: float = 10.0
    restart_mode: str = CORNER
    seed: int = 0
    feasibility_tol: float = 1e-9
    residual_tol: float = 1e-6
    trace_stride: int = 1
    early_stop: bool = False
    early_stop_patience: int = 50
    randomize_lp: bool = False

    def __post_init__(self) -> None:
        if self.iterations < 1:
            raise ValueError("iterations must be at least 1")
        if self.restart_weight <= 0:
            raise ValueError("restart_weight must be positive")
        if self.step_c <= 0 or self.step_k0 < 0:
            raise ValueError("step_c must be positive and step_k0 nonnegative")
        if not self.step_c < self.step_k0 + 1:
            raise ValueError(
                f"step_c={self.step_c} with step_k0={self.step_k0} makes the first "
                "step size reach 1; steps must stay inside (0, 1)"
            )
        if self.restart_mode not in (INTERIOR, CORNER):
            raise ValueError(f"restart_mode must be '{INTERIOR}' or '{CORNER}'")
        if self.trace_stride < 1:
            raise ValueError("trace_stride must be at least 1")
        if self.feasibility_tol < 0 or self.residual_tol < 0:
            raise ValueError("tolerances must be nonnegative")


class TraceRow(NamedTuple):
    k: int
    restarted: int
    j_r: float
    j_c: float
    feasible: int
    best_j_r: float
    residual: float


@dataclass
class GrcResult:
    """Best feasible policy found with its exact values and diagnostics."""

    best_policy: Policy | None
    best_objective: float
    best_constraint: float
    residual: float
    trace: list[TraceRow]
    iterations: int
    feasible_ever: bool
    restarts_scheduled: int
    restarts_lp_infeasible: int
    replacements_infeasible: int


def step_size(k: int, config: GrcConfig) -> float:
    """Diminishing step ``c / (k0 + k)`` for iterate k >= 1."""
    if k < 1:
        raise ValueError("iterate index starts at 1")
    return config.step_c / (config.step_k0 + k)


def restart_probability(k: int, restart_weight: float) -> float:
    """Restart probability ``min(1, w/k)``; sums over k diverge for any w > 0."""
    if k < 1:
        raise ValueError("iterate index starts at 1")
    return min(1.0, restart_weight / k)


def local_improve(policy: Policy, target: Policy, eps: float) -> Policy:
    """Move every decision rule a fraction ``eps`` toward the target rule.

    Convex combinations preserve the rule simplices exactly.
    """
    if not 0.0 <= eps < 1.0:
        raise ValueError(f"step size {eps} outside [0, 1)")
    if len(policy.rules) != len(target.rules):
        raise ValueError("policies have different horizons")
    rules = []
    for current, new in zip(policy.rules, target.rules):
        if current.shape != new.shape:
            raise ValueError(f"rule shapes differ: {current.shape} vs {new.shape}")
        rules.append((1.0 - eps) * current + eps * new)
    return Policy(tuple(rules))


def _signed_improvement(instance: RiskCmdpInstance, result: lp_mod.PolicyLpResult) -> float:
    gap = float(result.epoch_values.sum() - result.input_values.sum())
    return gap if instance.sense == MAXIMIZE else -gap


def fixed_point_residual(
    instance: RiskCmdpInstance, policy: Policy, tol: float = lp_mod.DEFAULT_TOL
) -> float:
    """Total one-epoch improvement available from ``policy``'s own LP.

    Nonnegative (up to roundoff) for feasible policies; a value near
    zero certifies that the policy solves its own LP.  Raises
    :class:`LpInfeasibleError` when the LP has no feasible point.
    """
    result = lp_mod.solve_lp_of_policy(instance, policy, tol=tol)
    if result.status == lp_mod.INFEASIBLE:
        raise LpInfeasibleError(
            f"per-policy LP infeasible at epoch {result.infeasible_epoch}"
        )
    return _signed_improvement(instance, result)


@dataclass
class _State:
    """Current iterate with cached factors and exact values."""

    policy: Policy
    factors: tuple[FactorSet, FactorSet]
    j_r: float
    j_c: float


def _full_state(instance: RiskCmdpInstance, policy: Policy, k: int) -> _State:
    fr = factor_set(instance, REWARD, policy)
    fc = factor_set(instance, CONSTRAINT, policy)
    j_r = risk_value_from_backward(instance, policy, fr.backward)
    j_c = risk_value_from_backward(instance, policy, fc.backward)
    if not (math.isfinite(j_r) and math.isfinite(j_c)):
        raise RuntimeError(f"non-finite risk value at iterate {k}: J_r={j_r}, J_c={j_c}")
    return _State(policy=policy, factors=(fr, fc), j_r=j_r, j_c=j_c)


def _candidate_values(instance: RiskCmdpInstance, policy: Policy, k: int) -> tuple[float, float]:
    q_r = backward_factors(instance, REWARD, policy)
    q_c = backward_factors(instance, CONSTRAINT, policy)
    j_r = risk_value_from_backward(instance, policy, q_r)
    j_c = risk_value_from_backward(instance, policy, q_c)
    if not (math.isfinite(j_r) and math.isfinite(j_c)):
        raise RuntimeError(f"non-finite candidate value at iterate {k}: J_r={j_r}, J_c={j_c}")
    return j_r, j_c


def run_grc(
    instance: RiskCmdpInstance,
    config: GrcConfig,
    rng: np.random.Generator | None = None,
) -> GrcResult:
    """Run the restart/local-improvement loop for the configured budget.

    Bit-for-bit reproducible for a fixed seed: the single generator
    drives restart coin flips, restart draws, replacement draws, and
    (only when ``randomize_lp`` is set) LP variable orders, in that
    fixed per-iterate order.
    """
    if rng is None:
        rng = np.random.default_rng(config.seed)
    bound_gate = instance.bound * (1.0 + config.feasibility_tol)

    best_policy: Policy | None = None
    best_j_r = math.nan
    best_j_c = math.nan
    feasible_ever = False
    restarts_scheduled = 0
    restarts_lp_infeasible = 0
    replacements_infeasible = 0
    trace: list[TraceRow] = []
    stall = 0

    def consider(policy: Policy, j_r: float, j_c: float) -> None:
        nonlocal best_policy, best_j_r, best_j_c
        if j_c > bound_gate:
            return
        if best_policy is None or instance.better(j_r, best_j_r):
            best_policy, best_j_r, best_j_c = policy, j_r, j_c

    state = _full_state(instance, random_policy(instance, config.restart_mode, rng), 0)
    iterations = config.iterations
    for k in range(1, config.iterations + 1):
        restarted = False
        residual_k = math.nan
        if rng.random() < restart_probability(k, config.restart_weight):
            state = _full_state(instance, random_policy(instance, config.restart_mode, rng), k)
            restarted = True
            restarts_scheduled += 1
        else:
            lp_result = lp_mod.solve_lp_of_policy(
                instance,
                state.policy,
                factors=state.factors,
                rng=rng if config.randomize_lp else None,
            )
            if lp_result.status == lp_mod.INFEASIBLE:
                state = _full_state(
                    instance, random_policy(instance, config.restart_mode, rng), k
                )
                restarted = True
                restarts_lp_infeasible += 1
            else:
                residual_k = _signed_improvement(instance, lp_result)
                target = lp_result.policy
                consider(target, *_candidate_values(instance, target, k))
                state = _full_state(
                    instance, local_improve(state.policy, target, step_size(k, config)), k
                )

        feasible = state.j_c <= bound_gate
        if feasible:
            feasible_ever = True
            consider(state.policy, state.j_r, state.j_c)
        if k % config.trace_stride == 0 or k == config.iterations:
            trace.append(
                TraceRow(
                    k=k,
                    restarted=int(restarted),
                    j_r=state.j_r,
                    j_c=state.j_c,
                    feasible=int(feasible),
                    best_j_r=best_j_r,
                    residual=residual_k,
                )
            )
        if not feasible:
            state = _full_state(instance, random_policy(instance, config.restart_mode, rng), k)
            replacements_infeasible += 1

        if config.early_stop:
            if not restarted and math.isfinite(residual_k) and residual_k < config.residual_tol:
                stall += 1
            else:
                stall = 0
            if stall >= config.early_stop_patience and best_policy is not None:
                iterations = k
                break

    residual = math.nan
    if best_policy is not None:
        try:
            residual = fixed_point_residual(instance, best_policy)
        except LpInfeasibleError:
            residual = math.nan

    return GrcResult(
        best_policy=best_policy,
        best_objective=best_j_r,
        best_constraint=best_j_c,
        residual=residual,
        trace=trace,
        iterations=iterations,
        feasible_ever=feasible_ever,
        restarts_scheduled=restarts_scheduled,
        restarts_lp_infeasible=restarts_lp_infeasible,
        replacements_infeasible=replacements_infeasible,
    )
