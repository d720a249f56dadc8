"""Figure rendering for the CLI report paths.

Every report-producing subcommand can drop a PNG next to its delimited
output: the classified region map, the coverage heatmap, the fit scatter
with model curves, and the absolute-error CDF comparison. Rendering uses
the Agg backend and fixed styling so reruns are byte-identical.
"""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402
from matplotlib.colors import ListedColormap  # noqa: E402

from .evaluate import EvalReport  # noqa: E402
from .propagation import LogDistParams  # noqa: E402
from .raster import RegionGrid  # noqa: E402

_DPI = 120


def _save(fig, path: str | Path) -> None:
    fig.savefig(path, dpi=_DPI)
    plt.close(fig)


def render_region_map(grid: RegionGrid, path: str | Path) -> None:
    """Label grid in representative colors, one legend entry per type."""
    if grid.type_colors is not None:
        colors = [tuple(c / 255.0 for c in rgb) for rgb in grid.type_colors]
    else:
        cycle = plt.get_cmap("tab10").colors
        colors = [cycle[i % len(cycle)] for i in range(grid.n_types)]
    cmap = ListedColormap(colors)

    extent_x = grid.width * grid.meters_per_pixel
    extent_y = grid.height * grid.meters_per_pixel
    fig, ax = plt.subplots(figsize=(6, 6 * grid.height / grid.width))
    ax.imshow(grid.labels, cmap=cmap, vmin=-0.5, vmax=grid.n_types - 0.5,
              interpolation="nearest", extent=(0, extent_x, extent_y, 0))
    names = grid.type_names or [f"type {i}" for i in range(grid.n_types)]
    handles = [plt.Rectangle((0, 0), 1, 1, fc=colors[i]) for i in range(grid.n_types)]
    ax.legend(handles, names, loc="upper right", fontsize=8, framealpha=0.9)
    ax.set_xlabel("x (m)")
    ax.set_ylabel("y (m)")
    fig.tight_layout()
    _save(fig, path)


def render_heatmap(values: np.ndarray, meters_per_cell: float, tx: tuple[float, float],
                   path: str | Path) -> None:
    """Coverage map of predicted loss in dB; the Tx is the white circle."""
    h, w = values.shape
    fig, ax = plt.subplots(figsize=(6.5, 6.5 * h / w))
    im = ax.imshow(values, cmap="turbo", interpolation="nearest",
                   extent=(0, w * meters_per_cell, h * meters_per_cell, 0))
    ax.plot(tx[0], tx[1], "o", color="white", markeredgecolor="black", markersize=8)
    fig.colorbar(im, ax=ax, label="path loss (dB)")
    ax.set_xlabel("x (m)")
    ax.set_ylabel("y (m)")
    fig.tight_layout()
    _save(fig, path)


def render_fit(distances: np.ndarray, losses: np.ndarray,
               curves: list[tuple[str, LogDistParams]], path: str | Path,
               truncation: float | None = None) -> None:
    """Loss-vs-distance scatter with fitted log-distance mean curves."""
    fig, ax = plt.subplots(figsize=(7, 5))
    ax.semilogx(distances, losses, ".", color="0.6", markersize=2.5, label="data")
    if len(distances):
        for label, p in curves:
            grid_d = np.geomspace(max(p.d0, float(distances.min())), float(distances.max()), 200)
            ax.semilogx(grid_d, p.intercept_c + 10.0 * p.n * np.log10(grid_d / p.d0),
                        label=f"{label} (n={p.n:.2f}, sigma={p.sigma:.2f})", linewidth=2)
    if truncation is not None:
        ax.axhline(truncation, color="red", linestyle="--", linewidth=1,
                   label=f"truncation {truncation:.0f} dB")
    ax.set_xlabel("distance (m)")
    ax.set_ylabel("path loss (dB)")
    ax.legend(loc="lower right", fontsize=8)
    ax.grid(True, which="both", linestyle=":", alpha=0.4)
    fig.tight_layout()
    _save(fig, path)


def render_predicted_vs_observed(predicted: np.ndarray, observed: np.ndarray,
                                 path: str | Path) -> None:
    """Scatter of model means against measurements with the identity line."""
    fig, ax = plt.subplots(figsize=(5.5, 5.5))
    ax.plot(observed, predicted, ".", color="tab:blue", markersize=2.5)
    lo = float(min(observed.min(), predicted.min()))
    hi = float(max(observed.max(), predicted.max()))
    ax.plot([lo, hi], [lo, hi], "k--", linewidth=1)
    ax.set_xlabel("observed path loss (dB)")
    ax.set_ylabel("predicted path loss (dB)")
    ax.grid(True, linestyle=":", alpha=0.4)
    fig.tight_layout()
    _save(fig, path)


def render_error_cdf(reports: list[tuple[str, EvalReport]], path: str | Path) -> None:
    """Absolute-error CDFs of one or more models on shared axes."""
    fig, ax = plt.subplots(figsize=(6.5, 5))
    for label, report in reports:
        ax.plot(report.error_cdf[:, 0], report.error_cdf[:, 1],
                label=f"{label} (RMSE {report.rmse:.2f} dB)", linewidth=2)
    ax.set_xlabel("absolute error (dB)")
    ax.set_ylabel("cumulative fraction")
    ax.set_ylim(0, 1.02)
    ax.legend(loc="lower right", fontsize=9)
    ax.grid(True, linestyle=":", alpha=0.4)
    fig.tight_layout()
    _save(fig, path)
