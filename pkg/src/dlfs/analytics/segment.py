"""Field segmentation from temporal edge statistics.

Edges that matter are the ones that persist through time. Each image in a
stack is cloud-masked, its spatial gradient magnitude is accumulated
together with a per-pixel count of valid observations, and the ratio gives
a temporal-mean gradient. Thresholding and a little morphology yield an
edge map; the non-edge pixels then fall apart into connected components,
one per field.
"""

from __future__ import annotations

from collections.abc import Sequence
from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage

from ..raster import DEFAULT_CLOUD_THRESHOLD, DEFAULT_VISIBLE_BANDS, RasterTile, mask_clouds
from ..tiling import TileKey, TileSpec
from .polygon import LabelPolygon, polygonize

CROSS = ndimage.generate_binary_structure(2, 1)
SQUARE = np.ones((3, 3), dtype=bool)


@dataclass
class EdgeStats:
    sum_gradient: np.ndarray
    valid_count: np.ndarray

    @classmethod
    def zeros(cls, shape: tuple[int, int]) -> EdgeStats:
        return cls(np.zeros(shape, dtype=np.float64), np.zeros(shape, dtype=np.int64))

    @property
    def shape(self) -> tuple[int, int]:
        return self.sum_gradient.shape

    def merge(self, other: EdgeStats) -> EdgeStats:
        return EdgeStats(self.sum_gradient + other.sum_gradient, self.valid_count + other.valid_count)


def gradient_magnitude(pixels: np.ndarray, valid: np.ndarray) -> np.ndarray:
    """Sum over bands of ``hypot(gx, gy)`` from forward differences.

    A difference contributes only when both pixels of the pair are valid,
    so masked-out stripes and cloud holes produce no edges.
    """
    h, w = valid.shape
    pair_x = valid[:, :-1] & valid[:, 1:]
    pair_y = valid[:-1, :] & valid[1:, :]
    total = np.zeros((h, w), dtype=np.float64)
    gx = np.zeros((h, w), dtype=np.float64)
    gy = np.zeros((h, w), dtype=np.float64)
    for band in pixels:
        v = band.astype(np.float64, copy=False)
        gx[:, :-1] = np.where(pair_x, v[:, 1:] - v[:, :-1], 0.0)
        gy[:-1, :] = np.where(pair_y, v[1:, :] - v[:-1, :], 0.0)
        total += np.hypot(gx, gy)
    return total


def edge_stats_update(stats: EdgeStats, t: RasterTile, bands: Sequence[int] | None = None) -> EdgeStats:
    """Add one (already cloud-masked) tile to ``stats`` in place and return it."""
    if t.valid.shape != stats.shape:
        raise ValueError(f"tile shape {t.valid.shape} does not match stats {stats.shape}")
    pixels = t.pixels if bands is None else t.pixels[list(bands)]
    stats.sum_gradient += gradient_magnitude(pixels, t.valid)
    stats.valid_count += t.valid
    return stats


def temporal_mean_gradient(stats: EdgeStats) -> np.ndarray:
    """Mean gradient per pixel; NaN where no image had valid data."""
    out = np.full(stats.shape, np.nan)
    np.divide(stats.sum_gradient, stats.valid_count, out=out, where=stats.valid_count > 0)
    return out


def otsu_threshold(values: np.ndarray, bins: int = 256) -> float:
    """Threshold maximizing between-class variance of a 1-D sample."""
    values = values[np.isfinite(values)]
    if values.size == 0:
        return np.inf
    lo, hi = float(values.min()), float(values.max())
    if hi <= lo:
        return np.nextafter(hi, np.inf)
    hist, edges = np.histogram(values, bins=bins, range=(lo, hi))
    centers = (edges[:-1] + edges[1:]) / 2
    w0 = np.cumsum(hist)
    w1 = w0[-1] - w0
    m0 = np.cumsum(hist * centers)
    mu0 = np.divide(m0, w0, out=np.zeros_like(m0), where=w0 > 0)
    mu1 = np.divide(m0[-1] - m0, w1, out=np.zeros_like(m0), where=w1 > 0)
    between = w0 * w1 * (mu0 - mu1) ** 2
    k = int(np.argmax(between[:-1]))
    return float(edges[k + 1])


def extract_edges(mean_grad: np.ndarray, threshold: float) -> np.ndarray:
    """Threshold, close with a 3x3 cross, then drop edge pixels with no edge neighbor."""
    if not threshold > 0:
        raise ValueError("edge threshold must be positive")
    with np.errstate(invalid="ignore"):
        edges = mean_grad >= threshold
    if not edges.any():
        return edges
    edges = ndimage.binary_dilation(edges, structure=CROSS)
    # outside counts as edge so lines running off the raster keep their ends
    edges = ndimage.binary_erosion(edges, structure=CROSS, border_value=1)
    neighbors = ndimage.convolve(edges.astype(np.int8), SQUARE.astype(np.int8), mode="constant") - edges
    return edges & (neighbors > 0)


def label_components(edges: np.ndarray, valid: np.ndarray) -> np.ndarray:
    """4-connected components of valid non-edge pixels.

    Labels run 1..N in the order each component is first met in a
    row-major scan; edge and invalid pixels get 0.
    """
    if edges.shape != valid.shape:
        raise ValueError("edges and valid must share a shape")
    raw, n = ndimage.label(valid & ~edges, structure=CROSS)
    if n == 0:
        return raw.astype(np.int32)
    flat = raw.ravel()
    ids, first = np.unique(flat, return_index=True)
    keep = ids > 0
    ids, first = ids[keep], first[keep]
    remap = np.zeros(n + 1, dtype=np.int32)
    remap[ids[np.argsort(first)]] = np.arange(1, ids.size + 1, dtype=np.int32)
    return remap[raw]


def colorize(labels: np.ndarray, seed: int = 0) -> np.ndarray:
    """Random RGB per label, black background, no two labels alike."""
    n = int(labels.max(initial=0))
    if n >= (1 << 24) - 1:
        raise ValueError("too many labels for distinct 24-bit colors")
    rng = np.random.default_rng(seed)
    codes = np.zeros(n + 1, dtype=np.int64)
    taken = {0}
    for lab in range(1, n + 1):
        c = int(rng.integers(1, 1 << 24))
        while c in taken:
            c = int(rng.integers(1, 1 << 24))
        taken.add(c)
        codes[lab] = c
    palette = np.stack([(codes >> 16) & 255, (codes >> 8) & 255, codes & 255], axis=-1).astype(np.uint8)
    return palette[labels]


@dataclass(frozen=True)
class SegmentParams:
    cloud_threshold: float = DEFAULT_CLOUD_THRESHOLD
    visible_bands: tuple[int, ...] = DEFAULT_VISIBLE_BANDS
    gradient_bands: tuple[int, ...] | None = None  # None: every band
    edge_threshold: float | None = None  # None: Otsu over the mean gradient
    polygons: bool = True


@dataclass
class FieldSegmentation:
    labels: np.ndarray
    polygons: list[LabelPolygon]
    key: TileKey
    spec: TileSpec
    mean_gradient: np.ndarray = field(repr=False)
    edges: np.ndarray = field(repr=False)
    threshold: float = 0.0

    @property
    def n_fields(self) -> int:
        return int(self.labels.max(initial=0))


def segment_fields(stack: Sequence[RasterTile], params: SegmentParams = SegmentParams()) -> FieldSegmentation:
    if not stack:
        raise ValueError("empty tile stack")
    first = stack[0]
    stats = EdgeStats.zeros(first.valid.shape)
    for t in stack:
        if t.key != first.key or t.valid.shape != first.valid.shape:
            raise ValueError("stack is not co-registered")
        clear, _ = mask_clouds(t, params.cloud_threshold, params.visible_bands)
        edge_stats_update(stats, clear, params.gradient_bands)
    mean = temporal_mean_gradient(stats)
    thr = params.edge_threshold
    if thr is None:
        thr = otsu_threshold(mean)
    edges = extract_edges(mean, thr) if np.isfinite(thr) else np.zeros(mean.shape, bool)
    labels = label_components(edges, stats.valid_count > 0)
    polys = polygonize(labels, first.key, first.spec) if params.polygons else []
    return FieldSegmentation(labels, polys, first.key, first.spec, mean, edges, float(thr))
