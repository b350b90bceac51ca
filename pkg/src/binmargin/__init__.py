"""Counting, bounding and sampling 0-1 matrices with prescribed row and column sums."""

from binmargin.margins_core import (
    Infeasible,
    MarginError,
    MarginPair,
    Pattern,
    SubsetIndex,
    cell_status,
    find_table,
    gale_ryser_feasible,
    interior_nonempty,
    validate,
)
from binmargin.entropy_solver import DualPoint, MaxEntropyResult, SolverConfig, solve
from binmargin.bounds import (
    BoundsReport,
    bounds_report,
    clone_margins,
    cloning_limit_check,
    independence_estimate,
    repulsion_gap,
    stirling_correction,
)
from binmargin.exact_oracle import (
    ExactCount,
    build_permanent_matrix,
    count_tables,
    count_via_permanent,
    enumerate_count,
    enumerate_tables,
    ryser_permanent,
    scaling_certificate,
)
from binmargin.sampler import (
    ConcentrationParams,
    SampleRun,
    concentration_experiment,
    rejection_sample,
    tail_bound,
)

__version__ = "0.1.0"

__all__ = [
    "BoundsReport",
    "ConcentrationParams",
    "DualPoint",
    "ExactCount",
    "Infeasible",
    "MarginError",
    "MarginPair",
    "MaxEntropyResult",
    "Pattern",
    "SampleRun",
    "SolverConfig",
    "SubsetIndex",
    "bounds_report",
    "build_permanent_matrix",
    "cell_status",
    "clone_margins",
    "cloning_limit_check",
    "concentration_experiment",
    "count_tables",
    "count_via_permanent",
    "enumerate_count",
    "enumerate_tables",
    "find_table",
    "gale_ryser_feasible",
    "independence_estimate",
    "interior_nonempty",
    "rejection_sample",
    "repulsion_gap",
    "ryser_permanent",
    "scaling_certificate",
    "solve",
    "stirling_correction",
    "tail_bound",
    "validate",
]
