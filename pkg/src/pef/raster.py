"""Raster maps and region classification.

An environment map arrives as an RGB portable pixmap (P6/P3). Pixels are
clustered in RGB space with k-means so each map color family becomes one
region type; the resulting label grid plus a meters-per-pixel scale is the
parametrized environment every other module works on.

Region grids persist as a portable graymap (P5/P2) holding the labels and a
plain-text ``<path>.meta`` sidecar carrying scale, type count, and optional
type names/colors. Both files are read and written together.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import DataError

_KMEANS_MAX_ITER = 300
# Rec. 709 luma weights, used to canonicalize cluster label order.
_LUMA = np.array([0.2126, 0.7152, 0.0722])


@dataclass
class RgbRaster:
    """RGB image held as a (height, width, 3) uint8 array, row-major."""

    pixels: np.ndarray

    def __post_init__(self) -> None:
        self.pixels = np.asarray(self.pixels, dtype=np.uint8)
        if self.pixels.ndim != 3 or self.pixels.shape[2] != 3:
            raise DataError("raster pixels must have shape (height, width, 3)")
        if self.width < 1 or self.height < 1:
            raise DataError("raster must be at least 1x1")

    @property
    def width(self) -> int:
        return self.pixels.shape[1]

    @property
    def height(self) -> int:
        return self.pixels.shape[0]


@dataclass
class RegionGrid:
    """Label grid of region-type ids with a physical scale.

    ``labels`` is (height, width) int, every value in ``0..n_types-1``.
    ``type_colors`` keeps the cluster centroids (rounded to 8-bit RGB) so
    grids can be rendered back in representative colors.
    """

    labels: np.ndarray
    meters_per_pixel: float
    n_types: int
    type_names: list[str] | None = None
    type_colors: list[tuple[int, int, int]] | None = None

    def __post_init__(self) -> None:
        self.labels = np.asarray(self.labels, dtype=np.int32)
        if self.labels.ndim != 2:
            raise DataError("label grid must be 2-D")
        if self.labels.shape[0] < 1 or self.labels.shape[1] < 1:
            raise DataError("label grid must be at least 1x1")
        if self.meters_per_pixel <= 0:
            raise DataError("meters_per_pixel must be > 0")
        if self.n_types < 1:
            raise DataError("region grid needs at least one type")
        if self.type_names is not None and len(self.type_names) != self.n_types:
            raise DataError("type_names length must equal n_types")
        if self.type_colors is not None and len(self.type_colors) != self.n_types:
            raise DataError("type_colors length must equal n_types")

    @property
    def width(self) -> int:
        return self.labels.shape[1]

    @property
    def height(self) -> int:
        return self.labels.shape[0]

    def validate_labels(self) -> None:
        lo = int(self.labels.min())
        hi = int(self.labels.max())
        if lo < 0 or hi >= self.n_types:
            raise DataError(
                f"label {hi if hi >= self.n_types else lo} outside 0..{self.n_types - 1}"
            )


# ---------------------------------------------------------------------------
# Portable anymap (PPM/PGM) I/O
# ---------------------------------------------------------------------------


def _next_token(buf: bytes, pos: int) -> tuple[bytes, int]:
    """Next whitespace-delimited token, skipping '#' comments."""
    n = len(buf)
    while pos < n:
        c = buf[pos : pos + 1]
        if c == b"#":
            while pos < n and buf[pos : pos + 1] not in (b"\n", b"\r"):
                pos += 1
        elif c.isspace():
            pos += 1
        else:
            break
    if pos >= n:
        raise DataError("malformed header: unexpected end of file")
    start = pos
    while pos < n and not buf[pos : pos + 1].isspace():
        pos += 1
    return buf[start:pos], pos


def _parse_pnm(data: bytes, magics: dict[bytes, bool], channels: int) -> np.ndarray:
    """Parse PPM/PGM bytes into (h, w[, channels]) uint8.

    ``magics`` maps accepted magic numbers to a binary-format flag.
    """
    try:
        magic, pos = _next_token(data, 0)
    except DataError:
        raise DataError("malformed header: empty file") from None
    if magic not in magics:
        expected = "/".join(m.decode() for m in magics)
        raise DataError(f"malformed header: expected {expected}, got {magic!r}")
    binary = magics[magic]

    dims = []
    for name in ("width", "height", "maxval"):
        tok, pos = _next_token(data, pos)
        try:
            value = int(tok)
        except ValueError:
            raise DataError(f"malformed header: bad {name} {tok!r}") from None
        dims.append(value)
    width, height, maxval = dims
    if width < 1 or height < 1:
        raise DataError(f"malformed header: bad dimensions {width}x{height}")
    if maxval != 255:
        raise DataError(f"unsupported max-value {maxval} (only 255)")

    count = width * height * channels
    if binary:
        pos += 1  # exactly one whitespace byte separates header and raster
        raw = data[pos : pos + count]
        if len(raw) < count:
            raise DataError(f"truncated pixel data: expected {count} bytes, got {len(raw)}")
        flat = np.frombuffer(raw, dtype=np.uint8)
    else:
        try:
            flat = np.array(
                [int(t) for t in data[pos:].split()[:count]], dtype=np.int64
            )
        except ValueError as exc:
            raise DataError(f"malformed pixel data: {exc}") from None
        if flat.size < count:
            raise DataError(f"truncated pixel data: expected {count} values, got {flat.size}")
        if flat.size and (flat.min() < 0 or flat.max() > maxval):
            raise DataError("pixel value outside 0..maxval")
        flat = flat.astype(np.uint8)

    shape = (height, width, channels) if channels > 1 else (height, width)
    return flat.reshape(shape)


def load_raster(path: str | Path) -> RgbRaster:
    """Load a binary (P6) or ASCII (P3) portable pixmap."""
    try:
        data = Path(path).read_bytes()
    except OSError as exc:
        raise DataError(f"cannot read raster: {exc}") from None
    return RgbRaster(_parse_pnm(data, {b"P6": True, b"P3": False}, channels=3))


def save_raster(raster: RgbRaster, path: str | Path, ascii_format: bool = False) -> None:
    """Write a raster as PPM, binary P6 by default."""
    h, w = raster.height, raster.width
    if ascii_format:
        body = "\n".join(
            " ".join(str(v) for v in row) for row in raster.pixels.reshape(h, -1)
        )
        Path(path).write_bytes(f"P3\n{w} {h}\n255\n{body}\n".encode())
    else:
        Path(path).write_bytes(f"P6\n{w} {h}\n255\n".encode() + raster.pixels.tobytes())


def save_region_grid(grid: RegionGrid, path: str | Path) -> None:
    """Write labels as binary PGM plus the ``<path>.meta`` sidecar."""
    grid.validate_labels()
    if grid.n_types > 256:
        raise DataError("cannot store more than 256 region types in an 8-bit graymap")
    path = Path(path)
    header = f"P5\n{grid.width} {grid.height}\n255\n".encode()
    path.write_bytes(header + grid.labels.astype(np.uint8).tobytes())

    lines = [
        f"meters_per_pixel: {grid.meters_per_pixel!r}",
        f"types: {grid.n_types}",
    ]
    if grid.type_names is not None:
        lines.append("type_names: " + ",".join(grid.type_names))
    if grid.type_colors is not None:
        lines.append(
            "type_colors: " + " ".join(f"{r},{g},{b}" for r, g, b in grid.type_colors)
        )
    Path(str(path) + ".meta").write_text("\n".join(lines) + "\n")


def load_region_grid(path: str | Path) -> RegionGrid:
    """Read a label graymap (P5/P2) together with its sidecar."""
    path = Path(path)
    try:
        data = path.read_bytes()
    except OSError as exc:
        raise DataError(f"cannot read region grid: {exc}") from None
    labels = _parse_pnm(data, {b"P5": True, b"P2": False}, channels=1)

    meta_path = Path(str(path) + ".meta")
    if not meta_path.exists():
        raise DataError(f"missing sidecar file {meta_path}")
    meta: dict[str, str] = {}
    for line in meta_path.read_text().splitlines():
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        if ":" not in line:
            raise DataError(f"malformed sidecar line {line!r}")
        key, _, value = line.partition(":")
        meta[key.strip()] = value.strip()

    if "meters_per_pixel" not in meta:
        raise DataError("sidecar missing meters_per_pixel")
    if "types" not in meta:
        raise DataError("sidecar missing types")
    try:
        mpp = float(meta["meters_per_pixel"])
        n_types = int(meta["types"])
    except ValueError as exc:
        raise DataError(f"malformed sidecar value: {exc}") from None

    names = meta["type_names"].split(",") if "type_names" in meta else None
    colors = None
    if "type_colors" in meta:
        colors = []
        for triple in meta["type_colors"].split():
            parts = triple.split(",")
            if len(parts) != 3:
                raise DataError(f"malformed type_colors entry {triple!r}")
            colors.append(tuple(int(p) for p in parts))

    grid = RegionGrid(labels.astype(np.int32), mpp, n_types, names, colors)
    grid.validate_labels()
    return grid


# ---------------------------------------------------------------------------
# k-means region classification
# ---------------------------------------------------------------------------


def _unique_colors(pixels: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Distinct RGB triples (ascending packed order), pixel counts, and the
    inverse index mapping every pixel to its distinct-color row."""
    flat = pixels.reshape(-1, 3).astype(np.uint32)
    packed = (flat[:, 0] << 16) | (flat[:, 1] << 8) | flat[:, 2]
    uniq, inverse, counts = np.unique(packed, return_inverse=True, return_counts=True)
    colors = np.stack(
        [(uniq >> 16) & 0xFF, (uniq >> 8) & 0xFF, uniq & 0xFF], axis=1
    ).astype(np.float64)
    return colors, counts.astype(np.float64), inverse


def _plusplus_init(colors: np.ndarray, weights: np.ndarray, k: int,
                   rng: np.random.Generator) -> np.ndarray:
    """k-means++ seeding over weighted points."""
    m = colors.shape[0]
    chosen = np.empty(k, dtype=np.int64)
    chosen[0] = rng.choice(m, p=weights / weights.sum())
    d2 = np.sum((colors - colors[chosen[0]]) ** 2, axis=1)
    for j in range(1, k):
        p = weights * d2
        chosen[j] = rng.choice(m, p=p / p.sum())
        d2 = np.minimum(d2, np.sum((colors - colors[chosen[j]]) ** 2, axis=1))
    return colors[chosen].copy()


def _kmeans_weighted(colors: np.ndarray, weights: np.ndarray, k: int,
                     rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray, list[float]]:
    """Lloyd iterations over weighted distinct colors.

    Equivalent to pixel-level k-means because every pixel of one color moves
    together. Returns (centroids, assignment, per-iteration objective).
    """
    centroids = _plusplus_init(colors, weights, k, rng)
    assign = np.full(colors.shape[0], -1, dtype=np.int64)
    objective: list[float] = []

    for _ in range(_KMEANS_MAX_ITER):
        d2 = np.sum((colors[:, None, :] - centroids[None, :, :]) ** 2, axis=2)
        new_assign = np.argmin(d2, axis=1)
        best = d2[np.arange(colors.shape[0]), new_assign]

        # Re-seed any emptied centroid on the worst-represented color.
        for j in range(k):
            if not np.any(new_assign == j):
                far = int(np.argmax(best))
                centroids[j] = colors[far]
                new_assign[far] = j
                best[far] = 0.0

        objective.append(float(np.dot(weights, best)))
        if np.array_equal(new_assign, assign):
            break
        assign = new_assign
        for j in range(k):
            sel = assign == j
            w = weights[sel]
            centroids[j] = (colors[sel] * w[:, None]).sum(axis=0) / w.sum()

    return centroids, assign, objective


def _canonical_order(centroids: np.ndarray) -> np.ndarray:
    """Label ids sorted by ascending luminance, RGB-lexicographic on ties."""
    keys = np.concatenate([centroids @ _LUMA[:, None], centroids], axis=1)
    return np.lexsort((keys[:, 3], keys[:, 2], keys[:, 1], keys[:, 0]))


def classify_regions(raster: RgbRaster, k: int, seed: int,
                     meters_per_pixel: float) -> RegionGrid:
    """Cluster raster pixels into ``k`` region types by RGB distance.

    Deterministic for a fixed (raster, k, seed); label ids are ordered by
    ascending centroid luminance so equal clusterings compare equal across
    seeds.
    """
    if k < 1:
        raise DataError("k must be >= 1")
    if meters_per_pixel <= 0:
        raise DataError("meters_per_pixel must be > 0")
    colors, counts, inverse = _unique_colors(raster.pixels)
    if k > colors.shape[0]:
        raise DataError(f"k={k} exceeds {colors.shape[0]} distinct colors")

    rng = np.random.default_rng(seed)
    centroids, assign, _ = _kmeans_weighted(colors, counts, k, rng)

    order = _canonical_order(centroids)
    relabel = np.empty(k, dtype=np.int64)
    relabel[order] = np.arange(k)
    labels = relabel[assign][inverse].reshape(raster.height, raster.width)

    rounded = np.clip(np.rint(centroids[order]), 0, 255).astype(int)
    type_colors = [tuple(int(v) for v in c) for c in rounded]
    return RegionGrid(labels.astype(np.int32), meters_per_pixel, k,
                      type_names=None, type_colors=type_colors)


def merge_regions(grid: RegionGrid, mapping: dict[int, int]) -> RegionGrid:
    """Fold region types together (e.g. two map colors, one real-world type).

    ``mapping`` sends source ids to target ids; surviving ids are compacted
    to 0..I'-1 preserving their relative order. Names/colors follow the
    surviving types.
    """
    for src, dst in mapping.items():
        if not (0 <= src < grid.n_types) or not (0 <= dst < grid.n_types):
            raise DataError(f"merge id {src}={dst} outside 0..{grid.n_types - 1}")
        if dst in mapping:
            raise DataError(f"merge target {dst} is itself merged away")

    step = np.arange(grid.n_types, dtype=np.int64)
    for src, dst in mapping.items():
        step[src] = dst
    survivors = np.unique(step)
    compact = np.full(grid.n_types, -1, dtype=np.int64)
    compact[survivors] = np.arange(survivors.size)
    labels = compact[step[grid.labels]]

    names = [grid.type_names[i] for i in survivors] if grid.type_names else None
    colors = [grid.type_colors[i] for i in survivors] if grid.type_colors else None
    return RegionGrid(labels.astype(np.int32), grid.meters_per_pixel,
                      int(survivors.size), names, colors)
