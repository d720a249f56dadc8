"""Path loss evaluation with per-region exponents.

The mean loss of a traced path is the intercept C plus the dot product of
the path's per-type coefficients with the exponent vector. With a single
type (or all exponents equal) this reduces to the classic log-distance
form C + 10*n*log10(d/d0). Shadow fading is a zero-mean Gaussian in dB,
sampled separately so predictions stay deterministic.

Parameter files are JSON documents with fields ``c``, ``n`` (array of I),
``sigma``, ``d0``.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path as FilePath

import numpy as np

from .errors import DataError
from .pathtrace import CoefficientVector, Point, _trace_runs, _accumulate, _validate_geometry
from .raster import RegionGrid


@dataclass
class PefParams:
    """Fitted model parameters: intercept C (dB), one path loss exponent
    per region type, and shadow-fading deviation sigma (dB)."""

    intercept_c: float
    exponents: np.ndarray
    sigma: float

    def __post_init__(self) -> None:
        self.exponents = np.asarray(self.exponents, dtype=np.float64)
        if self.exponents.ndim != 1 or self.exponents.size < 1:
            raise DataError("exponents must be a non-empty vector")
        if not np.isfinite(self.exponents).all() or not math.isfinite(self.intercept_c):
            raise DataError("parameters must be finite")
        if not math.isfinite(self.sigma) or self.sigma < 0:
            raise DataError(f"sigma={self.sigma} must be finite and >= 0")

    @property
    def n_types(self) -> int:
        return self.exponents.size


@dataclass
class LogDistParams:
    """Log-distance model: PL(d) = C + 10*n*log10(d/d0) + shadow fading."""

    intercept_c: float
    n: float
    sigma: float
    d0: float

    def __post_init__(self) -> None:
        if not math.isfinite(self.sigma) or self.sigma < 0:
            raise DataError(f"sigma={self.sigma} must be finite and >= 0")
        if self.d0 <= 0:
            raise DataError(f"d0={self.d0} must be > 0")


def predict_mean(coeffs: CoefficientVector, params: PefParams) -> float:
    """Mean path loss C + sum_i D_i * n_i for an already-reduced path."""
    if coeffs.coeffs.size != params.n_types:
        raise DataError(
            f"coefficient vector has {coeffs.coeffs.size} types, params {params.n_types}"
        )
    return float(params.intercept_c + coeffs.coeffs @ params.exponents)


def predict_pef(grid: RegionGrid, tx: Point, rx: Point, d0: float,
                params: PefParams) -> float:
    """Mean path loss between tx and rx on the region grid (no fading)."""
    if params.n_types != grid.n_types:
        raise DataError(f"params have {params.n_types} exponents, grid {grid.n_types} types")
    total = _validate_geometry(grid, tx, rx, d0)
    types, lengths = _trace_runs(grid, tx, rx, d0, total)
    coeffs = _accumulate(types, lengths, d0, grid.n_types)
    return float(params.intercept_c + coeffs @ params.exponents)


def predict_logdist(d: float, params: LogDistParams) -> float:
    """Log-distance mean path loss at range d >= d0."""
    if d < params.d0:
        raise DataError(f"d={d:.6g} m is below the close-in distance d0={params.d0:.6g} m")
    return params.intercept_c + 10.0 * params.n * math.log10(d / params.d0)


def sample_shadowed(mean: float, sigma: float,
                    seed: int | np.random.Generator,
                    size: int | None = None) -> float | np.ndarray:
    """Mean plus zero-mean Gaussian shadow fading, N(0, sigma^2) in dB."""
    if sigma < 0:
        raise DataError(f"sigma={sigma} must be >= 0")
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    draw = rng.normal(0.0, sigma, size=size)
    return mean + draw if size is not None else float(mean + draw)


def heatmap(grid: RegionGrid, tx: Point, d0: float, params: PefParams,
            stride: int = 1) -> np.ndarray:
    """Mean path loss at the center of every stride-th cell.

    Cells whose center lies within d0 of the Tx get the close-in value C.
    Output shape is (ceil(H/stride), ceil(W/stride)).
    """
    if stride < 1:
        raise DataError(f"stride={stride} must be >= 1")
    if d0 <= 0:
        raise DataError(f"d0={d0:.6g} must be > 0")
    if params.n_types != grid.n_types:
        raise DataError(f"params have {params.n_types} exponents, grid {grid.n_types} types")
    mpp = grid.meters_per_pixel
    w_m = grid.width * mpp
    h_m = grid.height * mpp
    if not (0.0 <= tx[0] < w_m and 0.0 <= tx[1] < h_m):
        raise DataError(f"tx ({tx[0]:.6g}, {tx[1]:.6g}) outside map bounds")

    xs = (np.arange(0, grid.width, stride) + 0.5) * mpp
    ys = (np.arange(0, grid.height, stride) + 0.5) * mpp
    out = np.empty((ys.size, xs.size), dtype=np.float64)

    c = params.intercept_c
    exps = params.exponents
    n_types = grid.n_types
    txx, txy = tx
    for r, cy in enumerate(ys):
        dy = cy - txy
        for q, cx in enumerate(xs):
            dist = math.hypot(cx - txx, dy)
            if dist <= d0:
                out[r, q] = c
            else:
                types, lengths = _trace_runs(grid, tx, (cx, cy), d0, dist)
                coeffs = _accumulate(types, lengths, d0, n_types)
                out[r, q] = c + coeffs @ exps
    return out


# ---------------------------------------------------------------------------
# Parameter file I/O
# ---------------------------------------------------------------------------


@dataclass
class ParamsFile:
    """On-disk model parameters: c, n (array of I), sigma, d0."""

    c: float
    n: list[float]
    sigma: float
    d0: float

    def pef_params(self) -> PefParams:
        return PefParams(self.c, np.array(self.n, dtype=np.float64), self.sigma)

    def logdist_params(self) -> LogDistParams:
        if len(self.n) != 1:
            raise DataError(f"log-distance params need exactly one exponent, file has {len(self.n)}")
        return LogDistParams(self.c, self.n[0], self.sigma, self.d0)


def save_params(path: str | FilePath, c: float, n, sigma: float, d0: float) -> None:
    doc = {
        "c": float(c),
        "n": [float(v) for v in np.atleast_1d(n)],
        "sigma": float(sigma),
        "d0": float(d0),
    }
    FilePath(path).write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")


def load_params(path: str | FilePath) -> ParamsFile:
    try:
        doc = json.loads(FilePath(path).read_text())
    except OSError as exc:
        raise DataError(f"cannot read params file: {exc}") from None
    except json.JSONDecodeError as exc:
        raise DataError(f"malformed params file {path}: {exc}") from None
    missing = {"c", "n", "sigma", "d0"} - doc.keys()
    if missing:
        raise DataError(f"params file {path} missing fields {sorted(missing)}")
    n = doc["n"] if isinstance(doc["n"], list) else [doc["n"]]
    params = ParamsFile(float(doc["c"]), [float(v) for v in n],
                        float(doc["sigma"]), float(doc["d0"]))
    if params.sigma < 0:
        raise DataError(f"params file {path}: sigma must be >= 0")
    if params.d0 <= 0:
        raise DataError(f"params file {path}: d0 must be > 0")
    return params
