"""Cloud-free compositing: a per-pixel weighted average over a time stack.

Clear, green observations get the most weight. Weights are
``eps + max(ndvi, 0)`` on clear valid pixels and zero elsewhere.
Accumulators merge, so partial reductions can run anywhere and combine
later in any order.
"""

from __future__ import annotations

from collections.abc import Iterable, Sequence
from dataclasses import dataclass

import numpy as np

from ..raster import DEFAULT_CLOUD_THRESHOLD, DEFAULT_VISIBLE_BANDS, RasterTile, cloud_mask, ndvi

WEIGHT_EPS = 0.01


@dataclass(frozen=True)
class CompositeParams:
    cloud_threshold: float = DEFAULT_CLOUD_THRESHOLD
    visible_bands: tuple[int, ...] = DEFAULT_VISIBLE_BANDS
    red_band: int = 2
    nir_band: int = 3
    eps: float = WEIGHT_EPS


def composite_weights(t: RasterTile, cloud: np.ndarray, ndvi_band: np.ndarray, eps: float = WEIGHT_EPS) -> np.ndarray:
    if cloud.shape != t.valid.shape or ndvi_band.shape != t.valid.shape:
        raise ValueError("cloud mask and ndvi must match the tile")
    green = np.nan_to_num(ndvi_band, nan=0.0).clip(min=0.0)
    return np.where(t.valid & ~cloud, eps + green, 0.0)


def tile_weights(t: RasterTile, params: CompositeParams = CompositeParams()) -> np.ndarray:
    cloud = cloud_mask(t, params.cloud_threshold, params.visible_bands)
    v, _ = ndvi(t.pixels[params.red_band], t.pixels[params.nir_band], t.valid)
    return composite_weights(t, cloud, v, params.eps)


@dataclass
class CompositeAccumulator:
    """Running sums plus the per-pixel range of contributing values.

    The range is used to clamp the final ratio, which removes rounding
    excursions outside the inputs (so one clear input comes back exactly).
    """

    weighted_sum: np.ndarray  # (bands, h, w)
    weight_sum: np.ndarray  # (h, w)
    lo: np.ndarray
    hi: np.ndarray

    @classmethod
    def zeros(cls, bands: int, shape: tuple[int, int]) -> CompositeAccumulator:
        full = (bands, *shape)
        return cls(np.zeros(full), np.zeros(shape), np.full(full, np.inf), np.full(full, -np.inf))

    def add(self, t: RasterTile, weights: np.ndarray) -> CompositeAccumulator:
        if weights.shape != self.weight_sum.shape or t.pixels.shape != self.weighted_sum.shape:
            raise ValueError("tile does not match accumulator shape")
        if np.any(weights < 0) or not np.all(np.isfinite(weights)):
            raise ValueError("weights must be finite and non-negative")
        w = np.where(t.valid, weights, 0.0)
        used = w > 0
        v = t.pixels.astype(np.float64)
        self.weighted_sum += np.where(used, w * v, 0.0)
        self.weight_sum += w
        np.minimum(self.lo, np.where(used, v, np.inf), out=self.lo)
        np.maximum(self.hi, np.where(used, v, -np.inf), out=self.hi)
        return self

    def merge(self, other: CompositeAccumulator) -> CompositeAccumulator:
        return CompositeAccumulator(
            self.weighted_sum + other.weighted_sum,
            self.weight_sum + other.weight_sum,
            np.minimum(self.lo, other.lo),
            np.maximum(self.hi, other.hi),
        )

    def mean(self) -> tuple[np.ndarray, np.ndarray]:
        """``(values, valid)``; values are float64 with NaN where no weight landed."""
        valid = self.weight_sum > 0
        out = np.full(self.weighted_sum.shape, np.nan)
        np.divide(self.weighted_sum, self.weight_sum, out=out, where=valid)
        np.clip(out, self.lo, self.hi, out=out, where=valid)
        return out, valid


def accumulate(tiles: Iterable[RasterTile], weights: Iterable[np.ndarray] | None = None,
               params: CompositeParams = CompositeParams()) -> CompositeAccumulator:
    acc = None
    ws = iter(weights) if weights is not None else None
    for t in tiles:
        w = next(ws) if ws is not None else tile_weights(t, params)
        if acc is None:
            acc = CompositeAccumulator.zeros(t.bands, t.valid.shape)
        acc.add(t, w)
    if acc is None:
        raise ValueError("composite needs at least one tile")
    return acc


def composite_reduce(tiles: Sequence[RasterTile], weights: Sequence[np.ndarray] | None = None,
                     params: CompositeParams = CompositeParams(), *, timestamp: int | None = None,
                     sensor: int | None = None) -> RasterTile:
    """Weighted average of a co-registered stack as a float32 tile."""
    if not tiles:
        raise ValueError("composite needs at least one tile")
    values, valid = accumulate(tiles, weights, params).mean()
    first = tiles[0]
    pixels = np.where(valid, values, 0.0).astype(np.float32)
    return RasterTile(
        first.key, first.spec, pixels, valid,
        max(t.timestamp for t in tiles) if timestamp is None else timestamp,
        first.sensor if sensor is None else sensor,
    )


def preview_rgb(t: RasterTile, rgb_bands: tuple[int, int, int] = (2, 1, 0), max_reflectance: float = 0.3) -> np.ndarray:
    """8-bit RGB rendering; invalid pixels are black."""
    x = np.stack([t.pixels[b].astype(np.float64) for b in rgb_bands], axis=-1)
    x = np.clip(x / max_reflectance, 0.0, 1.0) * 255.0
    x[~t.valid] = 0
    return np.round(x).astype(np.uint8)


def save_png(rgb: np.ndarray, path) -> None:
    from PIL import Image

    Image.fromarray(rgb, mode="RGB").save(path, format="PNG")
