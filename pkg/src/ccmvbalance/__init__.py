"""Balancing-weight estimation for non-monotone missing data under the
complete-case missing variable (CCMV) restriction."""

__version__ = "0.1.0"

from .basis import BasisFunction, BasisSet, BasisSpec, VarDomain, basis_manifest, \
    build_pattern_basis, build_raw_basis, orthogonalize, roughness_gram, \
    tolerance_vector
from .data import BINARY, CONTINUOUS, Column, DataError, Dataset, MaskedReadError, \
    PatternIndex, ResponsePattern, dataset_to_csv_bytes, index_patterns, \
    parse_dataset, pattern_rows
from .inference import EstimatingFunction, FitResult, assemble_weights, estimate_u, \
    fit_result_csv, fit_weighted, logistic_psi, sandwich_variance, solve_weighted_z
from .model import PatternBalancingLogit
from .odds import OddsFit, OptimizationError, PenaltyConfig, SolverOptions, \
    entropy_loss, fit_penalized, imbalance_vector, kkt_certificate, tailored_loss
from .simbench import BenchOptions, MethodResult, Replication, SimSetting, \
    StudyReport, gen_replication, make_setting, pattern_probabilities, run_method, \
    run_study, table1_csv, table2_csv
from .tuning import DEFAULT_GAMMAS, DEFAULT_LAMBDAS, CvGrid, CvReport, TuningError, \
    cross_validate, cv_report_csv, make_folds

__all__ = [
    "__version__",
    "BINARY", "CONTINUOUS", "Column", "DataError", "Dataset", "MaskedReadError",
    "PatternIndex", "ResponsePattern", "dataset_to_csv_bytes", "index_patterns",
    "parse_dataset", "pattern_rows",
    "BasisFunction", "BasisSet", "BasisSpec", "VarDomain", "basis_manifest",
    "build_pattern_basis", "build_raw_basis", "orthogonalize", "roughness_gram",
    "tolerance_vector",
    "OddsFit", "OptimizationError", "PenaltyConfig", "SolverOptions",
    "entropy_loss", "fit_penalized", "imbalance_vector", "kkt_certificate",
    "tailored_loss",
    "DEFAULT_GAMMAS", "DEFAULT_LAMBDAS", "CvGrid", "CvReport", "TuningError",
    "cross_validate", "cv_report_csv", "make_folds",
    "EstimatingFunction", "FitResult", "assemble_weights", "estimate_u",
    "fit_result_csv", "fit_weighted", "logistic_psi", "sandwich_variance",
    "solve_weighted_z",
    "PatternBalancingLogit",
    "BenchOptions", "MethodResult", "Replication", "SimSetting", "StudyReport",
    "gen_replication", "make_setting", "pattern_probabilities", "run_method",
    "run_study", "table1_csv", "table2_csv",
]
