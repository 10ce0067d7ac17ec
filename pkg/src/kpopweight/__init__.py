"""Kernel-balancing population weights for survey calibration.

Calibrates a non-representative sample to a target population on a
Gaussian-kernel feature expansion, alongside classic baselines
(mean calibration / raking, post-stratification), balance diagnostics,
and a Monte-Carlo harness for comparing estimators.
"""

from .dataset import Dataset, DesignMatrix, load_csv, one_hot, strata_labels
from .kernel import (
    DistanceHistogram,
    KernelMatrix,
    distance_histogram,
    make_kernel,
    select_bandwidth,
    variance_of_k,
)
from .spectral import SpectralDecomposition, scree, thin_svd
from .calibration import (
    CalibrationProblem,
    WeightSolution,
    entropy_balance,
    post_stratify,
    rake_margins,
)
from .kpop import (
    BiasBound,
    KpopConfig,
    KpopReport,
    bias_bound,
    build_constraints,
    ess,
    l1_imbalance,
    margin_error_table,
    n_to_90pct,
    solve,
)
from .estimation import EstimateResult, margin_estimate, weighted_mean
from .simharness import (
    CovariateBlock,
    EstimatorSpec,
    SampleDraw,
    SimulationReport,
    SyntheticDGP,
    SyntheticPopulation,
    bias_decomposition_check,
    default_estimators,
    draw_sample,
    generate_population,
    run_study,
)

__version__ = "0.1.0"

__all__ = [
    "Dataset",
    "DesignMatrix",
    "load_csv",
    "one_hot",
    "strata_labels",
    "KernelMatrix",
    "DistanceHistogram",
    "make_kernel",
    "distance_histogram",
    "variance_of_k",
    "select_bandwidth",
    "SpectralDecomposition",
    "thin_svd",
    "scree",
    "CalibrationProblem",
    "WeightSolution",
    "entropy_balance",
    "rake_margins",
    "post_stratify",
    "BiasBound",
    "KpopConfig",
    "KpopReport",
    "bias_bound",
    "build_constraints",
    "solve",
    "l1_imbalance",
    "ess",
    "n_to_90pct",
    "margin_error_table",
    "EstimateResult",
    "weighted_mean",
    "margin_estimate",
    "SyntheticDGP",
    "SyntheticPopulation",
    "CovariateBlock",
    "SampleDraw",
    "EstimatorSpec",
    "SimulationReport",
    "generate_population",
    "draw_sample",
    "run_study",
    "bias_decomposition_check",
    "default_estimators",
    "__version__",
]
