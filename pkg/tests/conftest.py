"""Shared builders for synthetic maps and reference parameters."""

from __future__ import annotations

import numpy as np
import pytest

from pef.propagation import PefParams
from pef.raster import RegionGrid

# Reference parameter set used across recovery tests: intercept, five
# per-type exponents, shadow deviation (dB).
REF_C = 74.95
REF_N = np.array([1.12, 1.74, 2.38, 4.39, 1.08])
REF_SIGMA = 6.80


def ref_params() -> PefParams:
    return PefParams(REF_C, REF_N.copy(), REF_SIGMA)


def voronoi_grid(side: int, n_types: int, mpp: float, seed: int,
                 n_seeds: int = 70) -> RegionGrid:
    """Patchwork map: every cell takes the type of its nearest seed point,
    giving contiguous same-type regions of all types."""
    rng = np.random.default_rng(seed)
    pts = rng.uniform(0, side, size=(n_seeds, 2))
    types = rng.integers(0, n_types, size=n_seeds)
    yy, xx = np.mgrid[0:side, 0:side]
    d2 = (xx[..., None] - pts[:, 0]) ** 2 + (yy[..., None] - pts[:, 1]) ** 2
    labels = types[np.argmin(d2, axis=2)]
    for t in range(n_types):  # tiny maps may miss a type entirely
        if not np.any(labels == t):
            labels[t, t] = t
    return RegionGrid(labels.astype(np.int32), mpp, n_types)


def random_grid(rng: np.random.Generator, max_side: int = 40,
                max_types: int = 5, mpp_range=(0.5, 5.0)) -> RegionGrid:
    w = int(rng.integers(2, max_side))
    h = int(rng.integers(2, max_side))
    n_types = int(rng.integers(1, max_types + 1))
    labels = rng.integers(0, n_types, size=(h, w)).astype(np.int32)
    mpp = float(rng.uniform(*mpp_range))
    return RegionGrid(labels, mpp, n_types)


def random_endpoints(rng: np.random.Generator, grid: RegionGrid,
                     min_dist: float) -> tuple[tuple[float, float], tuple[float, float]]:
    w_m = grid.width * grid.meters_per_pixel
    h_m = grid.height * grid.meters_per_pixel
    while True:
        tx = (float(rng.uniform(0, w_m)), float(rng.uniform(0, h_m)))
        rx = (float(rng.uniform(0, w_m)), float(rng.uniform(0, h_m)))
        if np.hypot(rx[0] - tx[0], rx[1] - tx[1]) > min_dist:
            return tx, rx


def dense_type_lengths(grid: RegionGrid, tx, rx, d0: float,
                       samples: int = 10 ** 6) -> np.ndarray:
    """Independent traversal oracle: split the path beyond d0 into equal
    subsegments and attribute each to the cell of its midpoint."""
    total = float(np.hypot(rx[0] - tx[0], rx[1] - tx[1]))
    ux = (rx[0] - tx[0]) / total
    uy = (rx[1] - tx[1]) / total
    step = (total - d0) / samples
    ts = d0 + (np.arange(samples) + 0.5) * step
    mpp = grid.meters_per_pixel
    cols = np.clip(((tx[0] + ts * ux) / mpp).astype(np.intp), 0, grid.width - 1)
    rows = np.clip(((tx[1] + ts * uy) / mpp).astype(np.intp), 0, grid.height - 1)
    counts = np.bincount(grid.labels[rows, cols], minlength=grid.n_types)
    return counts * step


def traced_type_lengths(path_segments, n_types: int) -> np.ndarray:
    out = np.zeros(n_types)
    for type_id, length in path_segments:
        out[type_id] += length
    return out


@pytest.fixture(scope="session")
def five_type_grid() -> RegionGrid:
    """160x160 cells at 5 m/px: an 800 m square with all five types."""
    return voronoi_grid(160, 5, 5.0, seed=11)
