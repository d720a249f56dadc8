"""Model-vs-measurement scoring.

Deterministic mean predictions are compared against observed losses:
residual = observed - predicted, summarized as RMSE, mean absolute error,
and the empirical CDF of the absolute error. The side-by-side comparison
runs the per-region model and the log-distance baseline on the same set
and names the lower-RMSE model the winner.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .dataset import MeasurementSet
from .errors import DataError
from .pathtrace import Point, _accumulate, _trace_runs, _validate_geometry
from .propagation import LogDistParams, PefParams, predict_logdist
from .raster import RegionGrid

Predictor = Callable[[Point], float]


@dataclass
class EvalReport:
    """Residual summary of one model on one measurement set."""

    rmse: float
    mean_abs_error: float
    error_cdf: np.ndarray  # (K, 2): sorted |residual| dB, cumulative fraction
    residuals: np.ndarray


@dataclass
class ModelComparison:
    pef: EvalReport
    logdist: EvalReport
    rmse_delta: float  # logdist RMSE minus PEF RMSE; positive favors PEF
    winner: str  # "pef" | "logdist" | "tie"


def _report_from_residuals(residuals: np.ndarray) -> EvalReport:
    k = residuals.size
    abs_err = np.sort(np.abs(residuals))
    cdf = np.column_stack((abs_err, np.arange(1, k + 1) / k))
    rmse = math.sqrt(float(residuals @ residuals) / k)
    return EvalReport(rmse=rmse, mean_abs_error=float(abs_err.mean()),
                      error_cdf=cdf, residuals=residuals)


def evaluate_model(mset: MeasurementSet, predictor: Predictor) -> EvalReport:
    """Score a per-record mean predictor against observed losses."""
    if len(mset) == 0:
        raise DataError("cannot evaluate an empty measurement set")
    predicted = np.array([predictor((x, y)) for x, y in mset.rx], dtype=np.float64)
    return _report_from_residuals(mset.pathloss - predicted)


def pef_predictor(grid: RegionGrid, tx: Point, d0: float,
                  params: PefParams) -> Predictor:
    """Per-record mean prediction through the region grid."""
    if params.n_types != grid.n_types:
        raise DataError(f"params have {params.n_types} exponents, grid {grid.n_types} types")

    def predict(rx: Point) -> float:
        total = _validate_geometry(grid, tx, rx, d0)
        types, lengths = _trace_runs(grid, tx, rx, d0, total)
        coeffs = _accumulate(types, lengths, d0, grid.n_types)
        return float(params.intercept_c + coeffs @ params.exponents)

    return predict


def logdist_predictor(tx: Point, params: LogDistParams) -> Predictor:
    """Distance-only mean prediction."""

    def predict(rx: Point) -> float:
        return predict_logdist(math.hypot(rx[0] - tx[0], rx[1] - tx[1]), params)

    return predict


def compare_models(mset: MeasurementSet, grid: RegionGrid, pef_params: PefParams,
                   logdist_params: LogDistParams, d0: float) -> ModelComparison:
    """Evaluate both models on one set and pick the lower-RMSE one."""
    pef_report = evaluate_model(mset, pef_predictor(grid, mset.tx, d0, pef_params))
    ld_report = evaluate_model(mset, logdist_predictor(mset.tx, logdist_params))
    delta = ld_report.rmse - pef_report.rmse
    if delta > 0:
        winner = "pef"
    elif delta < 0:
        winner = "logdist"
    else:
        winner = "tie"
    return ModelComparison(pef=pef_report, logdist=ld_report,
                           rmse_delta=delta, winner=winner)
