"""Functional multidimensional scaling.

Fits smooth B-spline trajectories x_i(t) = C_i b(t) to time-varying
dissimilarities with a pairwise Adam stochastic descent, aligns solutions to
references over the orthogonal group, and ships a simulation study harness
plus a CSV-driven command line.
"""

from .align import (
    AlignmentResult,
    CurvilinearConfig,
    SingularStepError,
    align,
    alignment_gradient,
    alignment_objective,
    bb_step,
    cayley_step,
    gram_schmidt,
    riemannian_grad,
    save_alignment_report,
)
from .basis import BasisSpec, basis_matrix, eval_basis, make_basis
from .cmds import classical_mds, init_coeffs
from .coeffs import CoeffSet, load_coeffs, save_coeffs
from .dissim import (
    DegenerateSeriesError,
    DissimilaritySeries,
    InsufficientDataError,
    PricePanel,
    build_super_matrix,
    correlation_dissim,
    euclidean_series,
    pair_count,
    pair_indices,
    pair_row,
    read_dissim_csv,
    read_price_csv,
    read_super_csv,
    series_from_super,
    write_dissim_csv,
    write_super_csv,
)
from .optimizer import (
    AdamPairState,
    FitConfig,
    FitResult,
    adam_pair_step,
    fit,
    pair_gradients,
    pair_loss,
    target_value,
)
from .study import (
    CellSummary,
    FailureRecord,
    RepRecord,
    ScenarioConfig,
    StudyReport,
    gen_scenario,
    mse_coeff,
    mse_dissim,
    rmse,
    run_replication,
    run_study,
    save_study_report,
)

__version__ = "0.1.0"

__all__ = [
    "AdamPairState",
    "AlignmentResult",
    "BasisSpec",
    "CellSummary",
    "CoeffSet",
    "CurvilinearConfig",
    "DegenerateSeriesError",
    "DissimilaritySeries",
    "FailureRecord",
    "FitConfig",
    "FitResult",
    "InsufficientDataError",
    "PricePanel",
    "RepRecord",
    "ScenarioConfig",
    "SingularStepError",
    "StudyReport",
    "adam_pair_step",
    "align",
    "alignment_gradient",
    "alignment_objective",
    "basis_matrix",
    "bb_step",
    "build_super_matrix",
    "cayley_step",
    "classical_mds",
    "correlation_dissim",
    "euclidean_series",
    "eval_basis",
    "fit",
    "gen_scenario",
    "gram_schmidt",
    "init_coeffs",
    "load_coeffs",
    "make_basis",
    "mse_coeff",
    "mse_dissim",
    "pair_count",
    "pair_gradients",
    "pair_indices",
    "pair_loss",
    "pair_row",
    "read_dissim_csv",
    "read_price_csv",
    "read_super_csv",
    "riemannian_grad",
    "rmse",
    "run_replication",
    "run_study",
    "save_alignment_report",
    "save_coeffs",
    "save_study_report",
    "series_from_super",
    "target_value",
    "write_dissim_csv",
    "write_super_csv",
]
