"""Finite-horizon investment-consumption solver under a consumption-drawdown
constraint, via the dual obstacle-problem pipeline.

Pipeline stages: per-habit-slice linear obstacle solves -> free-boundary
extraction and inversion -> dual surface assembly -> primal value, thresholds
and feedback policies -> Monte-Carlo verification.
"""

from ._backend import NUMBA_ENABLED, backend_name
from .boundary import BoundaryCurve, InverseBoundary, extract_boundary, invert_boundary
from .dual import (
    DualSurface,
    cap_stability_check,
    integrate_over_habit,
    pde_residuals,
    slope_asymptote_check,
    solve_capped_linear,
    solve_unconstrained,
)
from .errors import (
    DataError,
    DomainError,
    PreconditionError,
    SchemeError,
    TruncationError,
    UnboundedTransformError,
)
from .obstacle import (
    Grid1D,
    ObstacleSolution,
    PenaltyParams,
    solve_complementarity,
    solve_penalized,
    sweep_habit_slices,
)
from .params import MarketParams
from .primal import MertonOracle, PrimalPolicy, make_merton_oracle, terminal_threshold_limit
from .simulate import (
    PolicyTables,
    SimConfig,
    SimResult,
    clamped_proportion_policy,
    simulate_batch,
    simulate_policy,
)
from .utility import (
    CARAUtility,
    CRRAUtility,
    LogUtility,
    TabulatedUtility,
    UtilityKernel,
    ZeroUtility,
    make_utility,
)

__version__ = "0.1.0"

__all__ = [
    "NUMBA_ENABLED",
    "backend_name",
    "BoundaryCurve",
    "InverseBoundary",
    "extract_boundary",
    "invert_boundary",
    "DualSurface",
    "cap_stability_check",
    "integrate_over_habit",
    "pde_residuals",
    "slope_asymptote_check",
    "solve_capped_linear",
    "solve_unconstrained",
    "DataError",
    "DomainError",
    "PreconditionError",
    "SchemeError",
    "TruncationError",
    "UnboundedTransformError",
    "Grid1D",
    "ObstacleSolution",
    "PenaltyParams",
    "solve_complementarity",
    "solve_penalized",
    "sweep_habit_slices",
    "MarketParams",
    "MertonOracle",
    "PrimalPolicy",
    "make_merton_oracle",
    "terminal_threshold_limit",
    "PolicyTables",
    "SimConfig",
    "SimResult",
    "clamped_proportion_policy",
    "simulate_batch",
    "simulate_policy",
    "CARAUtility",
    "CRRAUtility",
    "LogUtility",
    "TabulatedUtility",
    "UtilityKernel",
    "ZeroUtility",
    "make_utility",
    "__version__",
]
