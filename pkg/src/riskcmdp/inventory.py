"""Inventory-control benchmark instances with geometric demand.

A single store holds at most ``capacity`` units.  Each day the owner
orders ``a`` units (received immediately, paying a fixed plus per-unit
cost), demand ``D`` arrives, unmet demand incurs a shortage cost, and
leftover stock incurs a holding cost.  Next-state-dependent costs are
replaced by their demand expectations, so all cost tables are in
(state, action) form; the geometric tail makes both the expectations
and the transition rows exact closed forms (no truncation).

Two variants:

* ``running-cost-constrained``: minimize ordering plus holding cost
  subject to a bound on the exponentiated shortage cost;
* ``order-count-constrained``: minimize ordering plus holding plus
  shortage cost subject to a bound on the exponentiated order volume.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

from . import model
from .model import MINIMIZE, ConfigError, RiskCmdpInstance

RUNNING_COST_CONSTRAINED = "running-cost-constrained"
ORDER_COUNT_CONSTRAINED = "order-count-constrained"

# geometric parameter conventions: which role the parameter p plays
CONTINUE = "continue"  # P(D = k) = (1-p) p^k, k >= 0
STOP = "stop"          # P(D = k) = p (1-p)^k, k >= 0


@dataclass(frozen=True)
class DemandModel:
    """Geometric daily demand on {0, 1, 2, ...} with an exact tail.

    ``continue_prob`` q gives P(D = k) = (1-q) q^k and P(D >= k) = q^k.
    """

    p: float
    convention: str = CONTINUE

    def __post_init__(self) -> None:
        if not 0.0 < self.p < 1.0:
            raise ConfigError(f"demand parameter must lie in (0, 1), got {self.p}")
        if self.convention not in (CONTINUE, STOP):
            raise ConfigError(f"unknown demand convention {self.convention!r}")

    @property
    def continue_prob(self) -> float:
        return self.p if self.convention == CONTINUE else 1.0 - self.p

    def pmf(self, k: int) -> float:
        q = self.continue_prob
        return (1.0 - q) * q**k

    def tail(self, k: int) -> float:
        """P(D >= k), exact."""
        return self.continue_prob**k

    def mean(self) -> float:
        q = self.continue_prob
        return q / (1.0 - q)


def expected_holdover(y: int, demand: DemandModel) -> float:
    """E[(y - D)^+] for stock-after-order y, in closed form."""
    if y < 0:
        raise ValueError("stock level must be nonnegative")
    q = demand.continue_prob
    return y - q / (1.0 - q) + q ** (y + 1) / (1.0 - q)


def expected_shortfall(y: int, demand: DemandModel) -> float:
    """E[(D - y)^+] for stock-after-order y, in closed form."""
    if y < 0:
        raise ValueError("stock level must be nonnegative")
    q = demand.continue_prob
    return q ** (y + 1) / (1.0 - q)


def inventory_transition(x: int, a: int, demand: DemandModel, capacity: int) -> np.ndarray:
    """Probability row over next stock levels 0..capacity for ordering a at x.

    Next stock is ``max(x + a - D, 0)``; the empty state absorbs the
    demand tail, so rows sum to one exactly.
    """
    y = x + a
    if a < 0 or y > capacity:
        raise ValueError(f"order {a} invalid at stock {x} with capacity {capacity}")
    row = np.zeros(capacity + 1)
    for j in range(1, y + 1):
        row[j] = demand.pmf(y - j)
    row[0] = demand.tail(y)
    return row


@dataclass(frozen=True)
class InventoryParams:
    """Scalar description of one benchmark instance.

    The constraint's risk factor is ``gamma * gamma_c_ratio``; the bound
    may be given directly or as ``normalized_bound`` v, meaning
    ``exp(v * gamma_c)`` so the normalized constraint value at an active
    optimum is v itself.
    """

    variant: str
    horizon: int
    capacity: int = 5
    fixed_order_cost: float = 0.2
    unit_order_cost: float = 0.4
    holding_cost: float = 0.1
    shortage_cost: float = 1.0
    demand_p: float = 0.7
    gamma: float = 0.5
    gamma_c_ratio: float = 0.1
    beta: float = 0.8
    beta_c: float = 0.8
    bound: float | None = None
    normalized_bound: float | None = 0.6
    demand_convention: str = CONTINUE

    def __post_init__(self) -> None:
        if self.variant not in (RUNNING_COST_CONSTRAINED, ORDER_COUNT_CONSTRAINED):
            raise ConfigError(f"unknown inventory variant {self.variant!r}")
        if self.capacity < 1:
            raise ConfigError("capacity must be at least 1")
        if self.horizon < 2:
            raise ConfigError("horizon must be at least 2")
        for name in ("fixed_order_cost", "unit_order_cost", "holding_cost", "shortage_cost"):
            if getattr(self, name) < 0:
                raise ConfigError(f"{name} must be nonnegative")
        if (self.bound is None) == (self.normalized_bound is None):
            raise ConfigError("set exactly one of 'bound' and 'normalized_bound'")

    @property
    def gamma_c(self) -> float:
        return self.gamma * self.gamma_c_ratio

    @property
    def effective_bound(self) -> float:
        if self.bound is not None:
            return self.bound
        return math.exp(self.normalized_bound * self.gamma_c)

    @property
    def demand(self) -> DemandModel:
        return DemandModel(p=self.demand_p, convention=self.demand_convention)

    @staticmethod
    def example1(horizon: int, **overrides) -> "InventoryParams":
        """Running-cost objective with a shortage-cost constraint."""
        params = InventoryParams(variant=RUNNING_COST_CONSTRAINED, horizon=horizon)
        return replace(params, **overrides) if overrides else params

    @staticmethod
    def example2(horizon: int, gamma: float = 2.0, normalized_bound: float = 4.0, **overrides):
        """Full running cost with a constraint on the exponentiated order volume."""
        params = InventoryParams(
            variant=ORDER_COUNT_CONSTRAINED,
            horizon=horizon,
            unit_order_cost=0.2,
            shortage_cost=6.0,
            demand_p=0.6,
            beta=0.7,
            beta_c=0.7,
            gamma=gamma,
            gamma_c_ratio=1.0,
            normalized_bound=normalized_bound,
        )
        return replace(params, **overrides) if overrides else params


def _cost_tables(params: InventoryParams) -> tuple[list, list]:
    """Per-state (x, a)-form running cost rows for objective and constraint."""
    demand = params.demand
    objective_rows = []
    constraint_rows = []
    for x in range(params.capacity + 1):
        obj_row = []
        con_row = []
        for a in range(params.capacity - x + 1):
            y = x + a
            ordering = (params.fixed_order_cost + a * params.unit_order_cost) if a > 0 else 0.0
            holding = params.holding_cost * expected_holdover(y, demand)
            shortage = params.shortage_cost * expected_shortfall(y, demand)
            if params.variant == RUNNING_COST_CONSTRAINED:
                obj_row.append(ordering + holding)
                con_row.append(shortage)
            else:
                obj_row.append(ordering + holding + shortage)
                con_row.append(float(a))
        objective_rows.append(obj_row)
        constraint_rows.append(con_row)
    return objective_rows, constraint_rows


def build_inventory(params: InventoryParams) -> RiskCmdpInstance:
    """Assemble the instance description for either variant and validate it."""
    capacity = params.capacity
    demand = params.demand
    states = [str(x) for x in range(capacity + 1)]
    kernel_rows = [
        [
            inventory_transition(x, a, demand, capacity).tolist()
            for a in range(capacity - x + 1)
        ]
        for x in range(capacity + 1)
    ]
    weights = np.array([capacity - x + 1 for x in range(capacity + 1)], dtype=float)
    alpha = (weights / weights.sum()).tolist()
    objective_rows, constraint_rows = _cost_tables(params)
    zeros = [0.0] * (capacity + 1)

    config = {
        "horizon": params.horizon,
        "states": states,
        "kernel": {"shared": kernel_rows},
        "reward": {
            "running": {"shared": objective_rows},
            "terminal": zeros,
            "gamma": params.gamma,
            "beta": params.beta,
            "alpha": alpha,
        },
        "constraint": {
            "running": {"shared": constraint_rows},
            "terminal": zeros,
            "gamma": params.gamma_c,
            "beta": params.beta_c,
            "alpha": alpha,
        },
        "bound": params.effective_bound,
        "sense": MINIMIZE,
    }
    return model.build_instance(config)


def build_inventory_example1(params: InventoryParams) -> RiskCmdpInstance:
    if params.variant != RUNNING_COST_CONSTRAINED:
        raise ConfigError(f"expected variant {RUNNING_COST_CONSTRAINED!r}")
    return build_inventory(params)


def build_inventory_example2(params: InventoryParams) -> RiskCmdpInstance:
    if params.variant != ORDER_COUNT_CONSTRAINED:
        raise ConfigError(f"expected variant {ORDER_COUNT_CONSTRAINED!r}")
    return build_inventory(params)


_PARAM_FIELDS = {
    "variant",
    "horizon",
    "capacity",
    "fixed_order_cost",
    "unit_order_cost",
    "holding_cost",
    "shortage_cost",
    "demand_p",
    "gamma",
    "gamma_c_ratio",
    "beta",
    "beta_c",
    "bound",
    "normalized_bound",
    "demand_convention",
}


def params_from_config(block: dict) -> InventoryParams:
    """Parse the ``inventory`` block of a config file."""
    if not isinstance(block, dict):
        raise ConfigError("'inventory' block must be a mapping")
    unknown = set(block) - _PARAM_FIELDS
    if unknown:
        raise ConfigError(f"unknown inventory fields: {sorted(unknown)}")
    if "variant" not in block or "horizon" not in block:
        raise ConfigError("inventory block needs 'variant' and 'horizon'")
    kwargs = dict(block)
    if "bound" in kwargs and "normalized_bound" not in kwargs:
        kwargs["normalized_bound"] = None
    try:
        return InventoryParams(**kwargs)
    except TypeError as exc:
        raise ConfigError(f"malformed inventory block: {exc}") from None
