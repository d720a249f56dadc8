"""Measurement sets: CSV ingestion, truncation, synthetic generation.

Measurement files are CSV with header ``tx_x_m,tx_y_m,rx_x_m,rx_y_m,
pathloss_db`` and a single transmitter per file. Truncation models a
receiver sensitivity limit: losses at or above the level L are simply
never recorded.

The synthetic generator is the verification backbone: it draws receiver
positions uniformly over the map, adds Gaussian shadow fading to the mean
prediction, and (optionally) rejection-samples the truncation, so fitted
parameters can be checked against known ground truth.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import DataError, NumericalError
from .pathtrace import Point, _trace_runs, _accumulate
from .propagation import PefParams
from .raster import RegionGrid

_HEADER = ["tx_x_m", "tx_y_m", "rx_x_m", "rx_y_m", "pathloss_db"]

# A truncation level keeping fewer than 1 in 1000 draws is treated as a
# misconfiguration rather than ground for an endless rejection loop.
_ATTEMPTS_PER_RECORD = 1000


@dataclass
class MeasurementSet:
    """One transmitter, many receiver positions with observed losses."""

    tx: Point
    rx: np.ndarray
    pathloss: np.ndarray
    truncation: float | None = None

    def __post_init__(self) -> None:
        self.rx = np.asarray(self.rx, dtype=np.float64).reshape(-1, 2)
        self.pathloss = np.asarray(self.pathloss, dtype=np.float64).reshape(-1)
        if self.rx.shape[0] != self.pathloss.shape[0]:
            raise DataError("rx and pathloss record counts differ")
        if not (np.isfinite(self.rx).all() and np.isfinite(self.pathloss).all()):
            raise DataError("measurement records must be finite")
        if self.truncation is not None and np.any(self.pathloss >= self.truncation):
            raise DataError(f"pathloss at or above the truncation level {self.truncation}")

    def __len__(self) -> int:
        return int(self.pathloss.size)

    def distances(self) -> np.ndarray:
        """Euclidean Tx-Rx distance per record, in meters."""
        return np.hypot(self.rx[:, 0] - self.tx[0], self.rx[:, 1] - self.tx[1])


def load_measurements(path: str | Path) -> MeasurementSet:
    """Read a measurement CSV; row order is preserved."""
    try:
        fh = open(path, newline="")
    except OSError as exc:
        raise DataError(f"cannot read measurements: {exc}") from None
    with fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise DataError(f"{path}: empty measurement file") from None
        if [h.strip() for h in header] != _HEADER:
            raise DataError(f"{path}: expected header {','.join(_HEADER)}")
        txs, rxs, losses = [], [], []
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != 5:
                raise DataError(f"{path}:{lineno}: expected 5 fields, got {len(row)}")
            try:
                values = [float(v) for v in row]
            except ValueError:
                raise DataError(f"{path}:{lineno}: non-numeric field") from None
            if not all(math.isfinite(v) for v in values):
                raise DataError(f"{path}:{lineno}: non-finite value")
            txs.append((values[0], values[1]))
            rxs.append((values[2], values[3]))
            losses.append(values[4])
    if not losses:
        raise DataError(f"{path}: no measurement records")
    if len(set(txs)) > 1:
        raise DataError(f"{path}: multiple tx positions in one file")
    return MeasurementSet(tx=txs[0], rx=np.array(rxs), pathloss=np.array(losses))


def save_measurements(mset: MeasurementSet, path: str | Path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(_HEADER)
        tx_x, tx_y = float(mset.tx[0]), float(mset.tx[1])
        for (rx_x, rx_y), loss in zip(mset.rx, mset.pathloss):
            writer.writerow([repr(tx_x), repr(tx_y), repr(float(rx_x)),
                             repr(float(rx_y)), repr(float(loss))])


def truncate(mset: MeasurementSet, level: float) -> MeasurementSet:
    """Drop records with pathloss >= level and record the level on the set."""
    if not math.isfinite(level):
        raise DataError(f"truncation level {level} must be finite")
    keep = mset.pathloss < level
    return MeasurementSet(tx=mset.tx, rx=mset.rx[keep],
                          pathloss=mset.pathloss[keep], truncation=level)


def gen_synthetic(grid: RegionGrid, tx: Point, params: PefParams, d0: float,
                  count: int, level: float | None,
                  seed: int | np.random.Generator) -> MeasurementSet:
    """Draw a synthetic measurement set from known parameters.

    Receiver positions are uniform over the map, excluding the close-in
    disc around the Tx; each loss is the mean prediction plus a fresh
    shadow-fading draw. With a truncation level, draws at or above it are
    rejected until ``count`` records are kept (budgeted: the level must
    keep at least ~0.1% of draws). Identical seeds reproduce identical
    sets.
    """
    if count < 1:
        raise DataError(f"count={count} must be >= 1")
    if d0 <= 0:
        raise DataError(f"d0={d0:.6g} must be > 0")
    if params.n_types != grid.n_types:
        raise DataError(f"params have {params.n_types} exponents, grid {grid.n_types} types")
    mpp = grid.meters_per_pixel
    w_m = grid.width * mpp
    h_m = grid.height * mpp
    if not (0.0 <= tx[0] < w_m and 0.0 <= tx[1] < h_m):
        raise DataError(f"tx ({tx[0]:.6g}, {tx[1]:.6g}) outside map bounds")

    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    c = params.intercept_c
    exps = params.exponents
    n_types = grid.n_types

    kept_rx: list[np.ndarray] = []
    kept_loss: list[np.ndarray] = []
    kept = 0
    attempts = 0
    budget = _ATTEMPTS_PER_RECORD * count
    batch = min(max(count, 1024), 65536)
    while kept < count:
        if attempts >= budget:
            raise NumericalError(
                f"rejection budget exhausted: {kept}/{count} kept after {attempts} draws"
            )
        pos = rng.uniform((0.0, 0.0), (w_m, h_m), size=(batch, 2))
        noise = rng.normal(0.0, params.sigma, size=batch)
        attempts += batch

        dist = np.hypot(pos[:, 0] - tx[0], pos[:, 1] - tx[1])
        valid = np.flatnonzero(dist > d0)
        losses = np.empty(valid.size, dtype=np.float64)
        for i, j in enumerate(valid):
            types, lengths = _trace_runs(grid, tx, (pos[j, 0], pos[j, 1]), d0, dist[j])
            coeffs = _accumulate(types, lengths, d0, n_types)
            losses[i] = c + coeffs @ exps + noise[j]

        if level is not None:
            ok = losses < level
            losses = losses[ok]
            valid = valid[ok]
        take = min(count - kept, losses.size)
        kept_rx.append(pos[valid[:take]])
        kept_loss.append(losses[:take])
        kept += take

    return MeasurementSet(tx=tx, rx=np.concatenate(kept_rx),
                          pathloss=np.concatenate(kept_loss), truncation=level)
