"""Exact policy evaluation for exponentiated-cost criteria.

Two factor families make every evaluation linear in the horizon:

* forward factors ``theta_t(x)``: expected exponentiated cost
  accumulated before epoch t, jointly with the chain being in ``x``;
* backward factors ``Q_t(x, a)``: expected exponentiated cost-to-go
  from ``(t, x, a)`` under the tail of the policy.

Their contraction against an arbitrary epoch-t decision rule
(:func:`f_linear`) equals the risk value of the policy spliced at t,
which is what the per-policy linear program is built from.  The risk
value of the policy itself falls out at t = 1 since ``theta_1`` is the
initial distribution.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .model import MAXIMIZE, Policy, RiskCmdpInstance, _check_cost


@dataclass(frozen=True)
class ForwardFactors:
    """``per_epoch[t-1][x] = theta_t(x)`` for t = 1..T, tagged with its source."""

    per_epoch: tuple[np.ndarray, ...]
    cost: str
    policy: Policy


@dataclass(frozen=True)
class BackwardFactors:
    """``per_epoch[t-1][x, a] = Q_t(x, a)`` for t = 1..T-1, plus the terminal factor.

    ``terminal[x] = exp(m_T(x))`` is action-free.  Padded (invalid)
    action entries are zero and must be masked out by consumers.
    """

    per_epoch: tuple[np.ndarray, ...]
    terminal: np.ndarray
    cost: str
    policy: Policy


@dataclass(frozen=True)
class FactorSet:
    """Forward and backward factors of one (policy, cost) pair."""

    forward: ForwardFactors
    backward: BackwardFactors


def forward_factors(instance: RiskCmdpInstance, cost: str, policy: Policy) -> ForwardFactors:
    """Propagate ``theta_1 = alpha`` forward through weighted transitions."""
    cost = _check_cost(cost)
    weights = instance.weights(cost)
    theta = instance.spec(cost).alpha
    per_epoch = [theta]
    for t in range(instance.horizon - 1):
        theta = np.einsum("x,xa,xay->y", theta, policy.rules[t], weights[t])
        per_epoch.append(theta)
    return ForwardFactors(per_epoch=tuple(per_epoch), cost=cost, policy=policy)


def backward_factors(instance: RiskCmdpInstance, cost: str, policy: Policy) -> BackwardFactors:
    """Accumulate cost-to-go factors backward from the terminal epoch.

    The decision weight applied at a successor state is the rule of the
    successor's epoch; the terminal factor carries no decision.
    """
    cost = _check_cost(cost)
    weights = instance.weights(cost)
    terminal = np.exp(instance.scaled(cost).terminal)
    value = terminal
    per_epoch: list[np.ndarray] = [None] * (instance.horizon - 1)  # type: ignore[list-item]
    for t in range(instance.horizon - 2, -1, -1):
        q = np.einsum("xay,y->xa", weights[t], value)
        per_epoch[t] = q
        if t > 0:
            value = np.einsum("xa,xa->x", policy.rules[t], q)
    return BackwardFactors(
        per_epoch=tuple(per_epoch), terminal=terminal, cost=cost, policy=policy
    )


def factor_set(instance: RiskCmdpInstance, cost: str, policy: Policy) -> FactorSet:
    return FactorSet(
        forward=forward_factors(instance, cost, policy),
        backward=backward_factors(instance, cost, policy),
    )


def f_linear(
    t: int,
    policy_tilde: Policy,
    theta: ForwardFactors,
    q: BackwardFactors,
) -> float:
    """Contract epoch-t factors against an arbitrary epoch-t decision rule.

    Linear in ``policy_tilde`` once the factors are fixed; equals the
    risk value of the factor policy with its epoch-t rule replaced by
    ``policy_tilde``'s.  ``t`` is 1-based and must lie in 1..T-1.
    """
    if theta.cost != q.cost:
        raise ValueError(f"factor cost mismatch: {theta.cost!r} vs {q.cost!r}")
    if theta.policy is not q.policy:
        raise ValueError("forward and backward factors come from different policies")
    if not 1 <= t <= len(q.per_epoch):
        raise ValueError(f"epoch {t} outside 1..{len(q.per_epoch)}")
    return float(
        np.einsum("x,xa,xa->", theta.per_epoch[t - 1], policy_tilde.rules[t - 1], q.per_epoch[t - 1])
    )


def risk_value_from_backward(instance: RiskCmdpInstance, policy: Policy, q: BackwardFactors) -> float:
    """Risk value via the epoch-1 contraction (theta_1 is the initial distribution)."""
    alpha = instance.spec(q.cost).alpha
    return float(np.einsum("x,xa,xa->", alpha, policy.rules[0], q.per_epoch[0]))


def evaluate_risk(instance: RiskCmdpInstance, cost: str, policy: Policy) -> float:
    """Exact expected exponentiated discounted cost of a policy."""
    q = backward_factors(instance, cost, policy)
    return risk_value_from_backward(instance, policy, q)


@dataclass(frozen=True)
class DpSolution:
    """Optimal value tables and a greedy deterministic policy.

    ``values[t-1][x] = u_t(x)``; ``optimal_value`` is the initial
    distribution contracted against ``u_1``.
    """

    values: tuple[np.ndarray, ...]
    greedy: Policy
    optimal_value: float


def unconstrained_dp(instance: RiskCmdpInstance, cost: str) -> DpSolution:
    """Backward induction for the unconstrained risk problem, respecting sense.

    Greedy ties break toward the lowest action index.
    """
    cost = _check_cost(cost)
    weights = instance.weights(cost)
    maximize = instance.sense == MAXIMIZE
    values: list[np.ndarray] = [None] * instance.horizon  # type: ignore[list-item]
    values[-1] = np.exp(instance.scaled(cost).terminal)
    rules = []
    for t in range(instance.horizon - 2, -1, -1):
        q = np.einsum("xay,y->xa", weights[t], values[t + 1])
        masked = np.where(instance.action_mask[t], q, -np.inf if maximize else np.inf)
        best = np.argmax(masked, axis=1) if maximize else np.argmin(masked, axis=1)
        rule = np.zeros_like(q)
        rule[np.arange(q.shape[0]), best] = 1.0
        rules.append(rule)
        values[t] = q[np.arange(q.shape[0]), best]
    greedy = Policy(tuple(reversed(rules)))
    alpha = instance.spec(cost).alpha
    return DpSolution(
        values=tuple(values),
        greedy=greedy,
        optimal_value=float(alpha @ values[0]),
    )
