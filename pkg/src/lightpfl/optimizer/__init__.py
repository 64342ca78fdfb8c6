"""Per-round resource and compression planning."""

from lightpfl.optimizer.dca import (
    DcaIterate,
    FeasibilityReport,
    OptimizationInstance,
    RoundPlan,
    build_instance,
    dca_solve,
    fallback_plan,
    feasibility_check,
    solve_subproblem,
)

__all__ = [
    "DcaIterate",
    "FeasibilityReport",
    "OptimizationInstance",
    "RoundPlan",
    "build_instance",
    "dca_solve",
    "fallback_plan",
    "feasibility_check",
    "solve_subproblem",
]
