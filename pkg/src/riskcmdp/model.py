"""Model types for finite-horizon risk-sensitive constrained MDPs.

An instance couples a time-indexed controlled Markov chain with two
exponentiated-cost criteria: an objective ("reward") to optimize and a
second criterion ("constraint") that must stay below a bound.  Decision
epochs run t = 1..T-1; epoch T only carries terminal costs.  Raw cost
tables are scaled to ``gamma * beta**t * raw`` once at construction and
cached, together with the transition weights ``p * exp(scaled_cost)``
that every evaluation pass consumes.

Instances are immutable after construction (all arrays are frozen) and
safe to share across threads or processes.  Policies are value-like:
operations return new objects.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Any

import numpy as np

MAXIMIZE = "maximize"
MINIMIZE = "minimize"
REWARD = "reward"
CONSTRAINT = "constraint"

INTERIOR = "interior"
CORNER = "corner"

KERNEL_TOL = 1e-12
ALPHA_TOL = 1e-12
POLICY_TOL = 1e-10

# exp() overflows float64 near 709; reject instances whose accumulated
# scaled-cost magnitude could push factor products past exp(600).
MAX_COST_EXPONENT = 600.0


class ConfigError(ValueError):
    """An instance/config description failed validation."""


@dataclass(frozen=True)
class CostSpec:
    """One exponentiated-cost criterion: raw tables plus its scaling factors.

    ``running[t]`` has shape (S_t, A_t, S_{t+1}) (padded over actions,
    zero on invalid entries); ``terminal`` has shape (S_T,).  ``alpha``
    is the initial state distribution used when evaluating this cost.
    """

    running: tuple[np.ndarray, ...]
    terminal: np.ndarray
    gamma: float
    beta: float
    alpha: np.ndarray


@dataclass(frozen=True)
class ScaledCosts:
    """Per-epoch scaled tables ``gamma * beta**t * raw`` (t is 1-based)."""

    running: tuple[np.ndarray, ...]
    terminal: np.ndarray


@dataclass(frozen=True)
class RiskCmdpInstance:
    """Validated problem instance with cached scaled costs and weights.

    ``kernel[t]`` is (S_t, A_t, S_{t+1}) with padded action rows all
    zero; ``action_mask[t]`` flags the valid (state, action) pairs.
    ``weights(cost)[t] = kernel[t] * exp(scaled running cost)`` is the
    tensor every forward/backward evaluation pass contracts against.
    """

    horizon: int
    state_labels: tuple[tuple[str, ...], ...]
    action_labels: tuple[tuple[tuple[str, ...], ...], ...]
    n_actions: tuple[np.ndarray, ...]
    action_mask: tuple[np.ndarray, ...]
    kernel: tuple[np.ndarray, ...]
    reward: CostSpec
    constraint: CostSpec
    bound: float
    sense: str
    scaled_reward: ScaledCosts
    scaled_constraint: ScaledCosts
    weights_reward: tuple[np.ndarray, ...]
    weights_constraint: tuple[np.ndarray, ...]

    @property
    def n_states(self) -> tuple[int, ...]:
        return tuple(len(labels) for labels in self.state_labels)

    def spec(self, cost: str) -> CostSpec:
        return self.reward if _check_cost(cost) == REWARD else self.constraint

    def scaled(self, cost: str) -> ScaledCosts:
        return self.scaled_reward if _check_cost(cost) == REWARD else self.scaled_constraint

    def weights(self, cost: str) -> tuple[np.ndarray, ...]:
        return self.weights_reward if _check_cost(cost) == REWARD else self.weights_constraint

    def better(self, a: float, b: float) -> bool:
        """True when objective value ``a`` strictly improves on ``b``."""
        return a > b if self.sense == MAXIMIZE else a < b


@dataclass
class Policy:
    """Markovian randomized policy: one stochastic decision rule per epoch.

    ``rules[t]`` is (S_t, A_t), row-stochastic over the valid actions of
    each state and exactly zero elsewhere.
    """

    rules: tuple[np.ndarray, ...]

    def copy(self) -> "Policy":
        return Policy(tuple(r.copy() for r in self.rules))


def _check_cost(cost: str) -> str:
    if cost not in (REWARD, CONSTRAINT):
        raise ValueError(f"unknown cost choice {cost!r}")
    return cost


def _freeze(arr: np.ndarray) -> np.ndarray:
    arr.flags.writeable = False
    return arr


def scale_costs(spec: CostSpec, horizon: int) -> ScaledCosts:
    """Apply the risk factor and per-epoch discount to raw cost tables."""
    running = tuple(
        _freeze(spec.gamma * spec.beta ** (t + 1) * spec.running[t])
        for t in range(horizon - 1)
    )
    terminal = _freeze(spec.gamma * spec.beta**horizon * spec.terminal)
    return ScaledCosts(running=running, terminal=terminal)


# ---------------------------------------------------------------------------
# Config ingestion
# ---------------------------------------------------------------------------


def _per_epoch(entry: Any, count: int, what: str) -> list:
    """Normalize a config table to one item per epoch.

    Accepts either a list with exactly ``count`` items or the shared form
    ``{"shared": table}`` which reuses one table for every epoch.
    """
    if isinstance(entry, dict):
        if set(entry) != {"shared"}:
            raise ConfigError(f"{what}: dict form must have the single key 'shared'")
        return [entry["shared"]] * count
    if not isinstance(entry, list) or len(entry) != count:
        raise ConfigError(f"{what}: expected a list of length {count} or {{'shared': table}}")
    return entry


def _parse_states(raw: Any, horizon: int) -> tuple[tuple[str, ...], ...]:
    if raw is None:
        raise ConfigError("missing 'states'")
    if all(isinstance(s, (str, int)) for s in raw):
        labels = tuple(str(s) for s in raw)
        return tuple(labels for _ in range(horizon))
    per = _per_epoch(list(raw), horizon, "states")
    return tuple(tuple(str(s) for s in epoch) for epoch in per)


def _parse_probability_vector(raw: Any, n: int, what: str, tol: float) -> np.ndarray:
    vec = np.asarray(raw, dtype=float)
    if vec.shape != (n,):
        raise ConfigError(f"{what}: expected {n} entries, got shape {vec.shape}")
    if not np.all(np.isfinite(vec)) or np.any(vec < 0):
        raise ConfigError(f"{what}: entries must be finite and nonnegative")
    if abs(vec.sum() - 1.0) > tol:
        raise ConfigError(f"{what}: entries sum to {vec.sum()!r}, not 1")
    return vec


def _parse_kernel(raw: Any, horizon: int, n_states: tuple[int, ...]):
    """Parse ragged kernel[t][x][a] -> probability row over S_{t+1}.

    Returns padded kernels, per-state action counts, and masks.
    """
    tables = _per_epoch(raw, horizon - 1, "kernel")
    kernels, n_actions, masks = [], [], []
    for t, table in enumerate(tables):
        s_t, s_next = n_states[t], n_states[t + 1]
        if len(table) != s_t:
            raise ConfigError(f"kernel[{t}]: expected {s_t} state rows, got {len(table)}")
        counts = np.array([len(row) for row in table], dtype=np.int64)
        if np.any(counts == 0):
            raise ConfigError(f"kernel[{t}]: empty action set at state {int(np.argmin(counts))}")
        a_max = int(counts.max())
        padded = np.zeros((s_t, a_max, s_next))
        for x, row in enumerate(table):
            for a, probs in enumerate(row):
                padded[x, a] = _parse_probability_vector(
                    probs, s_next, f"kernel[{t}][{x}][{a}]", KERNEL_TOL
                )
        mask = np.arange(a_max)[None, :] < counts[:, None]
        kernels.append(_freeze(padded))
        n_actions.append(_freeze(counts))
        masks.append(_freeze(mask))
    return tuple(kernels), tuple(n_actions), tuple(masks)


def _parse_cost_table(raw: Any, t: int, n_actions: np.ndarray, s_next: int, what: str) -> np.ndarray:
    """Parse one running-cost table, either (x, a) scalars or (x, a, x') rows.

    Expected-cost (x, a) entries are broadcast constant in the next state.
    """
    s_t = len(n_actions)
    if len(raw) != s_t:
        raise ConfigError(f"{what}[{t}]: expected {s_t} state rows, got {len(raw)}")
    a_max = int(n_actions.max())
    table = np.zeros((s_t, a_max, s_next))
    for x, row in enumerate(raw):
        if len(row) != n_actions[x]:
            raise ConfigError(
                f"{what}[{t}][{x}]: expected {int(n_actions[x])} action entries, got {len(row)}"
            )
        for a, entry in enumerate(row):
            value = np.asarray(entry, dtype=float)
            if value.ndim == 0:
                table[x, a, :] = float(value)
            elif value.shape == (s_next,):
                table[x, a, :] = value
            else:
                raise ConfigError(f"{what}[{t}][{x}][{a}]: scalar or length-{s_next} list required")
    if not np.all(np.isfinite(table)):
        raise ConfigError(f"{what}[{t}]: non-finite cost entry")
    return table


def _parse_cost_spec(raw: Any, what: str, horizon: int, n_states, n_actions) -> CostSpec:
    if not isinstance(raw, dict):
        raise ConfigError(f"missing or malformed '{what}' block")
    for key in ("running", "terminal", "gamma", "beta", "alpha"):
        if key not in raw:
            raise ConfigError(f"{what}: missing '{key}'")
    gamma = float(raw["gamma"])
    beta = float(raw["beta"])
    if gamma == 0.0:
        raise ConfigError(f"{what}: gamma must be nonzero")
    if not (0.0 < beta <= 1.0):
        raise ConfigError(f"{what}: beta must lie in (0, 1]")
    tables = _per_epoch(raw["running"], horizon - 1, f"{what}.running")
    running = tuple(
        _freeze(_parse_cost_table(tables[t], t, n_actions[t], n_states[t + 1], f"{what}.running"))
        for t in range(horizon - 1)
    )
    terminal = np.asarray(raw["terminal"], dtype=float)
    if terminal.shape != (n_states[-1],):
        raise ConfigError(f"{what}.terminal: expected {n_states[-1]} entries")
    if not np.all(np.isfinite(terminal)):
        raise ConfigError(f"{what}.terminal: non-finite entry")
    alpha = _parse_probability_vector(raw["alpha"], n_states[0], f"{what}.alpha", ALPHA_TOL)
    return CostSpec(
        running=running,
        terminal=_freeze(terminal),
        gamma=gamma,
        beta=beta,
        alpha=_freeze(alpha),
    )


def _parse_action_labels(raw: Any, horizon, n_actions) -> tuple:
    """Action labels are cosmetic; default to stringified indices."""
    labels = []
    for t in range(horizon - 1):
        counts = n_actions[t]
        if raw is None:
            epoch = tuple(tuple(str(a) for a in range(c)) for c in counts)
        else:
            flat = [str(a) for a in raw]
            for c in counts:
                if c > len(flat):
                    raise ConfigError("actions: fewer labels than actions in some state")
            epoch = tuple(tuple(flat[:c]) for c in counts)
        labels.append(epoch)
    return tuple(labels)


def _exponent_budget(scaled: ScaledCosts, masks) -> float:
    total = 0.0
    for table, mask in zip(scaled.running, masks):
        total += float(np.max(np.abs(table[mask])))
    total += float(np.max(np.abs(scaled.terminal)))
    return total


def build_instance(config: dict) -> RiskCmdpInstance:
    """Validate a structured instance description and cache derived tables.

    Rejects non-stochastic kernel rows, empty action sets, zero risk
    factors, non-positive bounds, horizons below 2, and instances whose
    worst-case accumulated scaled cost exceeds ``MAX_COST_EXPONENT``.
    """
    if not isinstance(config, dict):
        raise ConfigError("config must be a mapping")
    try:
        horizon = int(config["horizon"])
    except (KeyError, TypeError, ValueError):
        raise ConfigError("missing or malformed 'horizon'") from None
    if horizon < 2:
        raise ConfigError(f"horizon must be at least 2, got {horizon}")

    state_labels = _parse_states(config.get("states"), horizon)
    n_states = tuple(len(labels) for labels in state_labels)
    if "kernel" not in config:
        raise ConfigError("missing 'kernel'")
    kernel, n_actions, action_mask = _parse_kernel(config["kernel"], horizon, n_states)

    reward = _parse_cost_spec(config.get("reward"), "reward", horizon, n_states, n_actions)
    constraint = _parse_cost_spec(
        config.get("constraint"), "constraint", horizon, n_states, n_actions
    )

    raw_bound = config.get("bound")
    bound = math.inf if raw_bound in ("inf", None) else float(raw_bound)
    if not bound > 0.0:
        raise ConfigError(f"bound must be positive, got {bound}")
    sense = config.get("sense", MAXIMIZE)
    if sense not in (MAXIMIZE, MINIMIZE):
        raise ConfigError(f"sense must be '{MAXIMIZE}' or '{MINIMIZE}', got {sense!r}")

    scaled_reward = scale_costs(reward, horizon)
    scaled_constraint = scale_costs(constraint, horizon)
    for name, scaled in ((REWARD, scaled_reward), (CONSTRAINT, scaled_constraint)):
        budget = _exponent_budget(scaled, action_mask)
        if budget > MAX_COST_EXPONENT:
            raise ConfigError(
                f"{name}: accumulated scaled-cost magnitude {budget:.1f} exceeds "
                f"{MAX_COST_EXPONENT:.0f}; exponentials would be numerically unsafe"
            )

    weights_reward = tuple(
        _freeze(kernel[t] * np.exp(scaled_reward.running[t])) for t in range(horizon - 1)
    )
    weights_constraint = tuple(
        _freeze(kernel[t] * np.exp(scaled_constraint.running[t])) for t in range(horizon - 1)
    )

    return RiskCmdpInstance(
        horizon=horizon,
        state_labels=state_labels,
        action_labels=_parse_action_labels(config.get("actions"), horizon, n_actions),
        n_actions=n_actions,
        action_mask=action_mask,
        kernel=kernel,
        reward=reward,
        constraint=constraint,
        bound=bound,
        sense=sense,
        scaled_reward=scaled_reward,
        scaled_constraint=scaled_constraint,
        weights_reward=weights_reward,
        weights_constraint=weights_constraint,
    )


def instance_to_config(instance: RiskCmdpInstance) -> dict:
    """Inverse of :func:`build_instance` at full floating precision."""

    def cost_block(spec: CostSpec) -> dict:
        running = [
            [
                [spec.running[t][x, a].tolist() for a in range(int(instance.n_actions[t][x]))]
                for x in range(instance.n_states[t])
            ]
            for t in range(instance.horizon - 1)
        ]
        return {
            "running": running,
            "terminal": spec.terminal.tolist(),
            "gamma": spec.gamma,
            "beta": spec.beta,
            "alpha": spec.alpha.tolist(),
        }

    kernel = [
        [
            [instance.kernel[t][x, a].tolist() for a in range(int(instance.n_actions[t][x]))]
            for x in range(instance.n_states[t])
        ]
        for t in range(instance.horizon - 1)
    ]
    return {
        "horizon": instance.horizon,
        "states": [list(labels) for labels in instance.state_labels],
        "kernel": kernel,
        "reward": cost_block(instance.reward),
        "constraint": cost_block(instance.constraint),
        "bound": "inf" if math.isinf(instance.bound) else instance.bound,
        "sense": instance.sense,
    }


# ---------------------------------------------------------------------------
# Policies
# ---------------------------------------------------------------------------


def validate_policy(instance: RiskCmdpInstance, policy: Policy, tol: float = POLICY_TOL) -> None:
    """Check shapes, support, and row-stochasticity of every decision rule."""
    if len(policy.rules) != instance.horizon - 1:
        raise ValueError(
            f"policy has {len(policy.rules)} rules, instance needs {instance.horizon - 1}"
        )
    for t, rule in enumerate(policy.rules):
        mask = instance.action_mask[t]
        if rule.shape != mask.shape:
            raise ValueError(f"rule {t}: shape {rule.shape} does not match {mask.shape}")
        if np.any(rule[~mask] != 0.0):
            raise ValueError(f"rule {t}: probability mass on invalid actions")
        if np.any(rule < -tol):
            raise ValueError(f"rule {t}: negative probabilities")
        sums = rule.sum(axis=1)
        if np.any(np.abs(sums - 1.0) > tol):
            raise ValueError(f"rule {t}: rows must sum to 1 within {tol}")


def uniform_policy(instance: RiskCmdpInstance) -> Policy:
    """Uniform distribution over the valid actions of every state."""
    rules = []
    for t in range(instance.horizon - 1):
        mask = instance.action_mask[t]
        rule = mask / instance.n_actions[t][:, None]
        rules.append(rule)
    return Policy(tuple(rules))


def random_policy(instance: RiskCmdpInstance, mode: str, rng: np.random.Generator) -> Policy:
    """Draw a policy uniformly, either from the rule simplices or their corners.

    ``interior`` samples each decision rule from a flat Dirichlet;
    ``corner`` picks a uniformly random deterministic rule (one-hot).
    """
    if mode not in (INTERIOR, CORNER):
        raise ValueError(f"mode must be '{INTERIOR}' or '{CORNER}', got {mode!r}")
    rules = []
    for t in range(instance.horizon - 1):
        counts = instance.n_actions[t]
        rule = np.zeros(instance.action_mask[t].shape)
        for x, n in enumerate(counts):
            n = int(n)
            if mode == CORNER:
                rule[x, int(rng.integers(n))] = 1.0
            elif n == 1:
                rule[x, 0] = 1.0
            else:
                rule[x, :n] = rng.dirichlet(np.ones(n))
        rules.append(rule)
    return Policy(tuple(rules))


def policy_distance(a: Policy, b: Policy) -> float:
    """Sup-norm distance over all (epoch, state, action) probabilities."""
    if len(a.rules) != len(b.rules):
        raise ValueError("policies have different horizons")
    dist = 0.0
    for ra, rb in zip(a.rules, b.rules):
        if ra.shape != rb.shape:
            raise ValueError(f"rule shapes differ: {ra.shape} vs {rb.shape}")
        dist = max(dist, float(np.max(np.abs(ra - rb))))
    return dist


def policy_to_jsonable(instance: RiskCmdpInstance, policy: Policy) -> dict:
    """Ragged nested-list form: rules[t][x] lists the valid-action probabilities."""
    rules = [
        [rule[x, : int(instance.n_actions[t][x])].tolist() for x in range(instance.n_states[t])]
        for t, rule in enumerate(policy.rules)
    ]
    return {"rules": rules}


def policy_from_jsonable(instance: RiskCmdpInstance, data: dict) -> Policy:
    """Parse and validate the on-disk policy form against an instance."""
    if "rules" not in data:
        raise ConfigError("policy JSON must contain 'rules'")
    raw = data["rules"]
    if len(raw) != instance.horizon - 1:
        raise ConfigError(
            f"policy has {len(raw)} epochs, instance needs {instance.horizon - 1}"
        )
    rules = []
    for t, epoch in enumerate(raw):
        counts = instance.n_actions[t]
        if len(epoch) != len(counts):
            raise ConfigError(f"policy epoch {t}: expected {len(counts)} states")
        rule = np.zeros(instance.action_mask[t].shape)
        for x, row in enumerate(epoch):
            if len(row) != int(counts[x]):
                raise ConfigError(
                    f"policy epoch {t}, state {x}: expected {int(counts[x])} probabilities"
                )
            rule[x, : len(row)] = row
        rules.append(rule)
    policy = Policy(tuple(rules))
    validate_policy(instance, policy)
    return policy
