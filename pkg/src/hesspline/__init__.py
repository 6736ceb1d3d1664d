"""Curvature-penalized smoothing splines on sampled manifolds.

The pipeline: neighborhoods -> tangent frames -> per-point Hessian
functionals -> an assembled sparse penalty form -> weighted smoothing,
cross validation, robust reweighting, spectral coordinate recovery, and
local out-of-sample prediction.
"""

from .data import (
    Dataset,
    FitConfig,
    PointCloud,
    ResponseVector,
    SplineFit,
    WeightVector,
    load_dataset,
    load_fit,
    min_neighborhood_size,
    read_table,
    save_fit,
    write_points_csv,
)
from .errors import DataError, HessplineError, NumericalError, RankDeficientError
from .hessian import (
    HessianForm,
    LocalHessian,
    NullEmbedding,
    assemble,
    estimate,
    index_pairs,
    local_hessian,
    null_embedding,
    quadratic_form,
)
from .manifolds import (
    GroundTruth,
    ManifoldSpec,
    add_noise,
    generate,
    parameter_distance,
    response,
)
from .neighbors import (
    NeighborhoodIndex,
    TangentFrameEntry,
    knn,
    local_gram,
    tangent_frame,
    trimmed_tangent_frame,
)
from .predict import (
    ClassifierModel,
    Prediction,
    classify_fit,
    classify_predict,
    classify_scores,
    predict_oos,
)
from .solver import (
    CvReport,
    VarianceReport,
    cv_select,
    default_lambda_grid,
    effective_dof,
    fit,
    fit_weighted,
    reweight_fit,
    smoother_diagonal,
    variance_diagnostic,
)
from .tps import TpsModel, green_kernel, tps_eval, tps_fit

__version__ = "0.1.0"

__all__ = [
    "__version__",
    "HessplineError",
    "DataError",
    "NumericalError",
    "RankDeficientError",
    "PointCloud",
    "ResponseVector",
    "WeightVector",
    "FitConfig",
    "SplineFit",
    "Dataset",
    "load_dataset",
    "read_table",
    "write_points_csv",
    "save_fit",
    "load_fit",
    "min_neighborhood_size",
    "ManifoldSpec",
    "GroundTruth",
    "generate",
    "response",
    "add_noise",
    "parameter_distance",
    "NeighborhoodIndex",
    "TangentFrameEntry",
    "knn",
    "local_gram",
    "tangent_frame",
    "trimmed_tangent_frame",
    "LocalHessian",
    "HessianForm",
    "NullEmbedding",
    "index_pairs",
    "local_hessian",
    "assemble",
    "estimate",
    "quadratic_form",
    "null_embedding",
    "fit",
    "fit_weighted",
    "reweight_fit",
    "cv_select",
    "default_lambda_grid",
    "smoother_diagonal",
    "effective_dof",
    "variance_diagnostic",
    "CvReport",
    "VarianceReport",
    "TpsModel",
    "green_kernel",
    "tps_fit",
    "tps_eval",
    "Prediction",
    "ClassifierModel",
    "predict_oos",
    "classify_fit",
    "classify_scores",
    "classify_predict",
]
