"""matchlab: steady-state search equilibria and platform design on type grids."""

__version__ = "0.1.0"

from .core import (
    DSEState,
    EmptyMarketError,
    GlitchSpec,
    MatchlabError,
    NonConvergenceError,
    Platform,
    ProductionFunction,
    SearchParams,
    TypeGrid,
    load_platform,
    make_grid,
    save_platform,
    surplus,
)
from .designer import (
    DesignResult,
    ExclusionResult,
    Involution,
    design,
    enumerate_involutions,
    envelope_transfers,
    first_best_dse,
    first_best_platform,
    first_best_wage_coefficient,
    glitch,
    informational_rent,
    involution_rent,
    optimal_exclusion,
    perfect_info_transfers,
    private_info_transfers,
    transfer_coefficient,
)
from .simulator import PayoffCheck, SimConfig, SimOutcome, payoff_check, simulate
from .solver import SolverConfig, dse_residuals, solve_dse
from .verifier import AuditReport, audit, misreport_value, prop4_oracle

__all__ = [
    "__version__",
    "AuditReport",
    "DesignResult",
    "DSEState",
    "EmptyMarketError",
    "ExclusionResult",
    "GlitchSpec",
    "Involution",
    "MatchlabError",
    "NonConvergenceError",
    "PayoffCheck",
    "Platform",
    "ProductionFunction",
    "SearchParams",
    "SimConfig",
    "SimOutcome",
    "SolverConfig",
    "TypeGrid",
    "audit",
    "design",
    "dse_residuals",
    "enumerate_involutions",
    "envelope_transfers",
    "first_best_dse",
    "first_best_platform",
    "first_best_wage_coefficient",
    "glitch",
    "informational_rent",
    "involution_rent",
    "load_platform",
    "make_grid",
    "misreport_value",
    "optimal_exclusion",
    "payoff_check",
    "perfect_info_transfers",
    "private_info_transfers",
    "prop4_oracle",
    "save_platform",
    "simulate",
    "solve_dse",
    "surplus",
    "transfer_coefficient",
]
