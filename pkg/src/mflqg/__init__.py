"""Solvers and Monte Carlo verification tools for LQ mean-field games with
partial information: consistency systems via Riccati/linear ODEs, finite-N
population simulation under decentralized strategies, and studies of the
resulting approximate-equilibrium and convergence-rate properties."""

__version__ = "0.1.0"

from .consistency_pf import (
    PFConsistency,
    PFStrategy,
    build_pf_strategy,
    solve_limiting_mean_field_sde,
    solve_pf_consistency,
)
from .consistency_po import (
    LimitingPairPath,
    POConsistency,
    POStrategy,
    build_po_strategy,
    solve_limiting_pair,
    solve_po_consistency,
)
from .errors import (
    AssumptionViolation,
    DegenerateData,
    InsufficientReplications,
    MFLQGError,
    MissingCoefficient,
    OutOfDomain,
    RiccatiBlowUp,
)
from .harness import (
    NashGapReport,
    StudyResult,
    default_deviation_family,
    fit_loglog_slope,
    run_convergence_study,
    run_nash_gap_study,
    run_po_filter_study,
    run_stationarity_check,
)
from .model import (
    CoefficientTable,
    InformationMode,
    Model,
    PopulationConfig,
    TimeGrid,
    build_model,
    eval_coefficient,
)
from .odes import (
    MatrixPath3,
    ScalarPath,
    VectorPath3,
    solve_coupled_matrix_system,
    solve_forward_scalar_riccati,
    solve_terminal_linear,
    solve_terminal_scalar_riccati,
)
from .population import (
    CostEstimate,
    DeviationSpec,
    NoiseBundle,
    PopulationTrajectory,
    estimate_cost,
    generate_noise,
    simulate_pf_population,
    simulate_po_population,
)

__all__ = [
    "AssumptionViolation",
    "CoefficientTable",
    "CostEstimate",
    "DegenerateData",
    "DeviationSpec",
    "InformationMode",
    "InsufficientReplications",
    "LimitingPairPath",
    "MatrixPath3",
    "MFLQGError",
    "MissingCoefficient",
    "Model",
    "NashGapReport",
    "NoiseBundle",
    "OutOfDomain",
    "PFConsistency",
    "PFStrategy",
    "POConsistency",
    "POStrategy",
    "PopulationConfig",
    "PopulationTrajectory",
    "RiccatiBlowUp",
    "ScalarPath",
    "StudyResult",
    "TimeGrid",
    "VectorPath3",
    "build_model",
    "build_pf_strategy",
    "build_po_strategy",
    "default_deviation_family",
    "estimate_cost",
    "eval_coefficient",
    "fit_loglog_slope",
    "generate_noise",
    "run_convergence_study",
    "run_nash_gap_study",
    "run_po_filter_study",
    "run_stationarity_check",
    "simulate_pf_population",
    "simulate_po_population",
    "solve_coupled_matrix_system",
    "solve_forward_scalar_riccati",
    "solve_limiting_mean_field_sde",
    "solve_limiting_pair",
    "solve_pf_consistency",
    "solve_po_consistency",
    "solve_terminal_linear",
    "solve_terminal_scalar_riccati",
]
