"""cp4sbi: conformal calibration of approximate posteriors for
simulation-based inference.

Turns possibly miscalibrated conditional samplers into credible regions
with finite-sample marginal (and, for the tree-partitioned method,
local) coverage guarantees, and ships benchmark simulators plus a
coverage-evaluation harness.
"""

from .conformal import (
    CalibratedRegion,
    CoordinateSelector,
    LocartConfig,
    ParameterTransform,
    apply_transform,
    build_region,
    calibrate_cdf,
    calibrate_global,
    calibrate_hdr,
    calibrate_locart,
    calibrate_self,
    conformal_quantile,
    oracle_hpd_mask,
    oracle_mask_mass,
    rasterize_region,
)
from .evaluation import (
    ExperimentConfig,
    ExperimentReport,
    amc,
    conditional_coverage,
    confidence_interval,
    mae,
    run_experiment,
)
from .scores import (
    ScoreFunction,
    ecdf_transform,
    kde_hpd_score,
    make_score,
    scott_bandwidth,
)
from .surrogate import (
    ConditionalGaussianFit,
    DensityUnavailableError,
    MeanShiftedSurrogate,
    OracleSurrogate,
    ProjectedSurrogate,
    SampleOnlySurrogate,
    SurrogatePosterior,
    VarianceScaledSurrogate,
    fit_surrogate,
)
from .tasks import CalibrationSet, Task, generate_dataset, make_task, task_names
from .tree import RegressionTree, augment_features, fit_tree

__version__ = "0.1.0"

__all__ = [
    "CalibratedRegion",
    "CalibrationSet",
    "ConditionalGaussianFit",
    "CoordinateSelector",
    "DensityUnavailableError",
    "ExperimentConfig",
    "ExperimentReport",
    "LocartConfig",
    "MeanShiftedSurrogate",
    "OracleSurrogate",
    "ParameterTransform",
    "ProjectedSurrogate",
    "RegressionTree",
    "SampleOnlySurrogate",
    "ScoreFunction",
    "SurrogatePosterior",
    "Task",
    "VarianceScaledSurrogate",
    "amc",
    "apply_transform",
    "augment_features",
    "build_region",
    "calibrate_cdf",
    "calibrate_global",
    "calibrate_hdr",
    "calibrate_locart",
    "calibrate_self",
    "conditional_coverage",
    "confidence_interval",
    "conformal_quantile",
    "ecdf_transform",
    "fit_surrogate",
    "fit_tree",
    "generate_dataset",
    "kde_hpd_score",
    "mae",
    "make_score",
    "make_task",
    "oracle_hpd_mask",
    "oracle_mask_mass",
    "rasterize_region",
    "run_experiment",
    "scott_bandwidth",
    "task_names",
]
