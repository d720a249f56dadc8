"""Straight-line Tx-Rx traversal through a region grid.

The Tx-Rx segment is parametrized by arc length, broken at every grid-line
crossing, and each piece is attributed to the cell containing its midpoint,
which yields exact per-cell crossing lengths. The first ``d0`` meters (the
close-in allowance) are consumed before any segment is recorded; a cell run
only partially inside ``d0`` contributes its remainder. Consecutive
same-type pieces merge into maximal runs.

Like-term reduction folds a traced path into one coefficient per region
type: with cumulative distances cum_a = d0 + d_1 + ... + d_a measured from
the Tx, type i collects 10*log10(cum_a / cum_{a-1}) over its segments.
Coefficients are order-dependent: a region near the Tx weighs more per
meter than the same region near the Rx, so a path and its reverse have
mirrored crossing lengths but generally different coefficient vectors.

Points are continuous map coordinates in meters; a point belongs to the
cell ``floor(coord / meters_per_pixel)``, so points exactly on a grid line
fall in the higher-index cell. A line through a cell corner advances both
axes at once and attributes zero length to the diagonal neighbors.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import DataError
from .raster import RegionGrid

Point = tuple[float, float]


@dataclass
class PathMatrix:
    """Ordered per-region record of one traced Tx-Rx line.

    ``segments`` holds (type_id, length_m) for the part of the path beyond
    the close-in distance; ``tx_type`` is the region type at the Tx itself.
    """

    d0: float
    tx_type: int
    segments: list[tuple[int, float]]
    total_distance: float


@dataclass
class CoefficientVector:
    """Per-type weighted-distance coefficients of one path.

    ``coeffs[i]`` multiplies the i-th path loss exponent; types the path
    never crosses get 0. The entries always sum to
    10*log10(total_distance / d0).
    """

    coeffs: np.ndarray
    total_distance: float
    d0: float


def _check_bounds(grid: RegionGrid, point: Point, name: str) -> None:
    x, y = point
    w_m = grid.width * grid.meters_per_pixel
    h_m = grid.height * grid.meters_per_pixel
    if not (0.0 <= x < w_m and 0.0 <= y < h_m):
        raise DataError(f"{name} ({x:.6g}, {y:.6g}) outside map bounds {w_m:.6g} x {h_m:.6g} m")


def _validate_geometry(grid: RegionGrid, tx: Point, rx: Point, d0: float) -> float:
    _check_bounds(grid, tx, "tx")
    _check_bounds(grid, rx, "rx")
    total = math.hypot(rx[0] - tx[0], rx[1] - tx[1])
    if total == 0.0:
        raise DataError("tx and rx coincide")
    if d0 <= 0.0:
        raise DataError(f"d0={d0:.6g} must be > 0")
    if d0 >= total:
        raise DataError(
            f"rx at distance {total:.6g} m lies inside the close-in distance d0={d0:.6g} m"
        )
    return total


def _crossing_ts(origin: float, u: float, t_lo: float, t_hi: float, mpp: float) -> np.ndarray:
    """Arc-length parameters in [t_lo, t_hi] where origin + t*u crosses a
    multiple of mpp (one coordinate axis)."""
    if u == 0.0:
        return np.empty(0, dtype=np.float64)
    a = origin + t_lo * u
    b = origin + t_hi * u
    lo, hi = (a, b) if a <= b else (b, a)
    j0 = math.ceil(lo / mpp)
    j1 = math.floor(hi / mpp)
    if j1 < j0:
        return np.empty(0, dtype=np.float64)
    ts = np.arange(j0, j1 + 1, dtype=np.float64)
    ts *= mpp
    ts -= origin
    ts /= u
    return ts


def _trace_runs(grid: RegionGrid, tx: Point, rx: Point, d0: float,
                total: float) -> tuple[np.ndarray, np.ndarray]:
    """Maximal same-type runs (types, lengths) beyond d0. No validation."""
    mpp = grid.meters_per_pixel
    ux = (rx[0] - tx[0]) / total
    uy = (rx[1] - tx[1]) / total

    ts = np.concatenate((
        np.array((d0, total), dtype=np.float64),
        _crossing_ts(tx[0], ux, d0, total, mpp),
        _crossing_ts(tx[1], uy, d0, total, mpp),
    ))
    np.maximum(ts, d0, out=ts)
    np.minimum(ts, total, out=ts)
    ts.sort()

    lengths = ts[1:] - ts[:-1]
    keep = lengths > 0.0
    lengths = lengths[keep]
    mid = (0.5 * (ts[:-1] + ts[1:]))[keep]

    cols = np.floor_divide(tx[0] + mid * ux, mpp).astype(np.intp)
    rows = np.floor_divide(tx[1] + mid * uy, mpp).astype(np.intp)
    np.minimum(np.maximum(cols, 0, out=cols), grid.width - 1, out=cols)
    np.minimum(np.maximum(rows, 0, out=rows), grid.height - 1, out=rows)
    cell_types = grid.labels[rows, cols]

    if cell_types.size > 1:
        starts = np.flatnonzero(np.concatenate(([True], cell_types[1:] != cell_types[:-1])))
        return cell_types[starts].astype(np.int64), np.add.reduceat(lengths, starts)
    return cell_types.astype(np.int64), lengths


def trace_path(grid: RegionGrid, tx: Point, rx: Point, d0: float) -> PathMatrix:
    """Trace the straight line from tx to rx through the region grid.

    Requires both endpoints in bounds, tx != rx, and 0 < d0 < |tx-rx|.
    Segment lengths conserve the Euclidean distance: d0 plus their sum
    equals |tx-rx|.
    """
    total = _validate_geometry(grid, tx, rx, d0)
    mpp = grid.meters_per_pixel
    tx_type = int(grid.labels[int(tx[1] // mpp), int(tx[0] // mpp)])
    types, lengths = _trace_runs(grid, tx, rx, d0, total)
    segments = [(int(t), float(l)) for t, l in zip(types, lengths)]
    return PathMatrix(d0=d0, tx_type=tx_type, segments=segments, total_distance=total)


def _accumulate(types: np.ndarray, lengths: np.ndarray, d0: float,
                n_types: int) -> np.ndarray:
    cum = d0 + lengths.cumsum()
    prev = np.concatenate(((d0,), cum[:-1]))
    return np.bincount(types, weights=10.0 * np.log10(cum / prev), minlength=n_types)


def like_term_coefficients(path: PathMatrix, n_types: int) -> CoefficientVector:
    """Combine a path's like terms into per-type coefficients."""
    if path.d0 <= 0.0:
        raise DataError(f"d0={path.d0:.6g} must be > 0")
    if path.segments:
        types = np.array([t for t, _ in path.segments], dtype=np.int64)
        lengths = np.array([l for _, l in path.segments], dtype=np.float64)
        if types.min() < 0 or types.max() >= n_types:
            bad = types.max() if types.max() >= n_types else types.min()
            raise DataError(f"segment type {bad} outside 0..{n_types - 1}")
    else:
        types = np.empty(0, dtype=np.int64)
        lengths = np.empty(0, dtype=np.float64)
    coeffs = _accumulate(types, lengths, path.d0, n_types)
    return CoefficientVector(coeffs=coeffs, total_distance=path.total_distance, d0=path.d0)


def coefficients_between(grid: RegionGrid, tx: Point, rx: Point, d0: float) -> np.ndarray:
    """Per-type coefficient vector for one Tx-Rx line, in one call.

    Identical to ``like_term_coefficients(trace_path(...), grid.n_types)``
    but skips the intermediate path record; used on hot paths (heatmaps,
    synthetic generation, design matrices).
    """
    total = _validate_geometry(grid, tx, rx, d0)
    types, lengths = _trace_runs(grid, tx, rx, d0, total)
    return _accumulate(types, lengths, d0, grid.n_types)
