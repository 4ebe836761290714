from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from PIL import Image

from dlfs.analytics import (
    CompositeAccumulator,
    CompositeParams,
    accumulate,
    composite_reduce,
    composite_weights,
    preview_rgb,
    save_png,
    tile_weights,
)
from dlfs.raster import RasterTile
from dlfs.tiling import TileKey, TileSpec

from oracles import weighted_mean_loops

KEY = TileKey(10, 0, 0)
SPEC = TileSpec(8, 0, 30.0)


def tile(pixels, valid=None, ts=0):
    pixels = np.asarray(pixels)
    if pixels.ndim == 2:
        pixels = pixels[None]
    if valid is None:
        valid = np.ones(pixels.shape[1:], bool)
    return RasterTile(KEY, SPEC, pixels, valid, ts)


def test_weights_examples():
    t = tile(np.zeros((4, 1, 4)), np.array([[True, True, True, False]]))
    cloud = np.array([[True, False, False, False]])
    nd = np.array([[0.5, -0.2, 0.8, 0.9]])
    w = composite_weights(t, cloud, nd)
    assert w[0, 0] == 0.0 and w[0, 3] == 0.0
    assert w[0, 1] == 0.01
    assert w[0, 2] == pytest.approx(0.81, abs=1e-15)
    assert composite_weights(t, np.zeros((1, 4), bool), np.full((1, 4), np.nan))[0, 0] == 0.01
    with pytest.raises(ValueError):
        composite_weights(t, np.zeros((2, 2), bool), nd)


def test_tile_weights_pipeline():
    px = np.zeros((4, 2, 2), np.float32)
    px[2], px[3] = 0.1, 0.5  # red, nir: ndvi 2/3
    px[:3, 0, 0] = 0.9  # bright in every visible band: cloud
    w = tile_weights(tile(px))
    assert w[0, 0] == 0.0
    assert w[1, 1] == pytest.approx(0.01 + 2 / 3, rel=1e-6)
    assert tile_weights(tile(px), CompositeParams(cloud_threshold=0.95))[0, 0] > 0


def test_single_clear_input_exact():
    rng = np.random.default_rng(0)
    px = rng.random((4, 8, 8)).astype(np.float32) * 0.25
    out = composite_reduce([tile(px, ts=5)])
    assert np.array_equal(out.pixels, px) and out.valid.all()
    assert out.timestamp == 5 and out.key == KEY


def test_two_images_weighted():
    a, b = tile(np.full((1, 2, 2), 10.0)), tile(np.full((1, 2, 2), 20.0))
    out = composite_reduce([a, b], [np.ones((2, 2)), np.full((2, 2), 3.0)])
    assert np.all(out.pixels == 17.5)


def test_cloudy_pixel_takes_clear_value():
    rng = np.random.default_rng(1)
    a = rng.random((4, 8, 8)) * 0.2
    a[:3, 2:5, 2:5] = 0.95  # cloud over part of A
    b = rng.random((4, 8, 8)) * 0.2
    acc = accumulate([tile(a), tile(b)])
    vals, ok = acc.mean()
    assert ok.all()
    assert np.max(np.abs(vals[:, 2:5, 2:5] - b[:, 2:5, 2:5])) <= 1e-12


def test_no_weight_is_invalid():
    a = tile(np.ones((1, 2, 2)), np.array([[True, False], [True, True]]))
    out = composite_reduce([a], [np.array([[1.0, 1.0], [0.0, 1.0]])])
    assert np.array_equal(out.valid, [[True, False], [False, True]])
    assert out.pixels[0, 0, 1] == 0 and out.pixels[0, 1, 0] == 0


def random_stack(rng, n=None, bands=2, h=4, w=5):
    n = n or int(rng.integers(1, 8))
    tiles, weights = [], []
    for _ in range(n):
        px = rng.normal(0, 10, (bands, h, w)) * 10 ** rng.uniform(-3, 3)
        tiles.append(tile(px, rng.random((h, w)) < 0.8))
        wt = rng.random((h, w)) * 10 ** rng.uniform(-3, 3)
        wt[rng.random((h, w)) < 0.2] = 0.0
        weights.append(wt)
    return tiles, weights


@settings(max_examples=200)
@given(st.integers(0, 2**32 - 1))
def test_convex_and_matches_oracle(seed):
    rng = np.random.default_rng(seed)
    tiles, weights = random_stack(rng)
    vals, ok = accumulate(tiles, weights).mean()
    eff = [np.where(t.valid, w, 0.0) for t, w in zip(tiles, weights)]
    oracle = weighted_mean_loops([t.pixels for t in tiles], eff)
    assert np.array_equal(ok, ~np.isnan(oracle[0]))
    assert np.allclose(vals[:, ok], oracle[:, ok], rtol=1e-12, atol=1e-300)
    used = np.stack([w > 0 for w in eff])
    px = np.stack([t.pixels for t in tiles])
    lo = np.where(used[:, None], px, np.inf).min(0)
    hi = np.where(used[:, None], px, -np.inf).max(0)
    assert np.all(vals[:, ok] >= lo[:, ok]) and np.all(vals[:, ok] <= hi[:, ok])


@settings(max_examples=100)
@given(st.integers(0, 2**32 - 1))
def test_order_and_merge_invariance(seed):
    rng = np.random.default_rng(seed)
    tiles, weights = random_stack(rng, n=int(rng.integers(2, 9)))
    base, ok = accumulate(tiles, weights).mean()
    perm = rng.permutation(len(tiles))
    again, ok2 = accumulate([tiles[k] for k in perm], [weights[k] for k in perm]).mean()
    assert np.array_equal(ok, ok2)
    scale = np.maximum(1.0, np.abs(base[:, ok]))
    assert np.all(np.abs(again[:, ok] - base[:, ok]) <= 1e-10 * scale)
    cut = int(rng.integers(1, len(tiles)))
    merged = accumulate(tiles[:cut], weights[:cut]).merge(accumulate(tiles[cut:], weights[cut:]))
    m, ok3 = merged.mean()
    assert np.array_equal(ok, ok3)
    assert np.all(np.abs(m[:, ok] - base[:, ok]) <= 1e-10 * scale)


def test_accumulator_errors():
    acc = CompositeAccumulator.zeros(1, (2, 2))
    with pytest.raises(ValueError):
        acc.add(tile(np.zeros((1, 2, 2))), -np.ones((2, 2)))
    with pytest.raises(ValueError):
        acc.add(tile(np.zeros((1, 2, 2))), np.full((2, 2), np.nan))
    with pytest.raises(ValueError):
        acc.add(tile(np.zeros((2, 2, 2))), np.ones((2, 2)))
    with pytest.raises(ValueError):
        composite_reduce([])
    with pytest.raises(ValueError):
        accumulate([])


def test_preview_png(tmp_path):
    px = np.zeros((4, 3, 3), np.float32)
    px[2] = 0.3  # red at full scale
    px[1] = 0.15
    valid = np.ones((3, 3), bool)
    valid[0, 0] = False
    rgb = preview_rgb(tile(px, valid))
    assert rgb.dtype == np.uint8 and rgb.shape == (3, 3, 3)
    assert tuple(rgb[1, 1]) == (255, 128, 0) and tuple(rgb[0, 0]) == (0, 0, 0)
    path = tmp_path / "p.png"
    save_png(rgb, path)
    with Image.open(path) as im:
        assert im.format == "PNG" and im.mode == "RGB"
        assert np.array_equal(np.asarray(im), rgb)
