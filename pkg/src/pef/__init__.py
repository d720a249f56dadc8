"""Per-region path loss modeling.

A raster map is clustered into region types, each type carries its own
path loss exponent, and the loss of a Tx-Rx link accumulates per-region
contributions along the straight line between them. Exponents, intercept,
and shadow-fading deviation are estimated from (right-truncated)
measurements by truncated-Gaussian maximum likelihood.
"""

from .dataset import MeasurementSet, gen_synthetic, load_measurements, save_measurements, truncate
from .errors import DataError, NumericalError, PefError
from .evaluate import (EvalReport, ModelComparison, compare_models, evaluate_model,
                       logdist_predictor, pef_predictor)
from .inference import (DesignMatrix, FitOptions, FitReport, fit_ml, fit_ml_logdist,
                        loglik_gradient, ls_fit_logdist, ls_init, normal_hazard,
                        truncated_loglik)
from .pathtrace import (CoefficientVector, PathMatrix, coefficients_between,
                        like_term_coefficients, trace_path)
from .propagation import (LogDistParams, ParamsFile, PefParams, heatmap, load_params,
                          predict_logdist, predict_mean, predict_pef, sample_shadowed,
                          save_params)
from .raster import (RegionGrid, RgbRaster, classify_regions, load_raster,
                     load_region_grid, merge_regions, save_raster, save_region_grid)

__version__ = "0.1.0"

__all__ = [
    "CoefficientVector", "DataError", "DesignMatrix", "EvalReport", "FitOptions",
    "FitReport", "LogDistParams", "MeasurementSet", "ModelComparison", "ParamsFile",
    "PathMatrix", "PefError", "PefParams", "NumericalError", "RegionGrid", "RgbRaster",
    "classify_regions", "coefficients_between", "compare_models", "evaluate_model",
    "fit_ml", "fit_ml_logdist", "gen_synthetic", "heatmap", "like_term_coefficients",
    "load_measurements", "load_params", "load_raster", "load_region_grid",
    "logdist_predictor", "loglik_gradient", "ls_fit_logdist", "ls_init",
    "merge_regions", "normal_hazard", "pef_predictor", "predict_logdist",
    "predict_mean", "predict_pef", "sample_shadowed", "save_measurements",
    "save_params", "save_raster", "save_region_grid", "trace_path", "truncate",
    "truncated_loglik",
]
