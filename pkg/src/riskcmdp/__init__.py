"""Finite-horizon risk-sensitive constrained MDP solver.

Exact factor-based policy evaluation, a per-policy LP decomposed into
per-epoch programs solved by an in-house dense simplex, a global
random-restart / local-improvement solver, brute-force verification
oracles, and inventory-control benchmark generators.
"""

from .model import (
    CONSTRAINT,
    CORNER,
    INTERIOR,
    MAXIMIZE,
    MINIMIZE,
    REWARD,
    ConfigError,
    CostSpec,
    Policy,
    RiskCmdpInstance,
    ScaledCosts,
    build_instance,
    instance_to_config,
    policy_distance,
    policy_from_jsonable,
    policy_to_jsonable,
    random_policy,
    scale_costs,
    uniform_policy,
    validate_policy,
)
from .evaluate import (
    BackwardFactors,
    DpSolution,
    FactorSet,
    ForwardFactors,
    backward_factors,
    evaluate_risk,
    f_linear,
    factor_set,
    forward_factors,
    unconstrained_dp,
)
from .lp import (
    EpochLp,
    LpSolution,
    PolicyLpResult,
    build_epoch_lp,
    format_epoch_lp,
    solve_epoch_lp,
    solve_lp_of_policy,
)
from .grc import (
    GrcConfig,
    GrcResult,
    LpInfeasibleError,
    TraceRow,
    fixed_point_residual,
    local_improve,
    restart_probability,
    run_grc,
    step_size,
)
from .oracle import (
    OracleCapExceeded,
    PathEnumeration,
    SearchResult,
    corner_policy_search,
    enumerate_paths,
    enumerate_paths_eval,
    randomized_grid_search,
)
from .inventory import (
    DemandModel,
    InventoryParams,
    build_inventory,
    build_inventory_example1,
    build_inventory_example2,
    expected_holdover,
    expected_shortfall,
    inventory_transition,
)

__version__ = "0.1.0"
