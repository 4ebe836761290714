from __future__ import annotations

import json

import numpy as np
import pytest
import shapely
from hypothesis import given, settings
from hypothesis import strategies as st
from shapely.geometry import Polygon

from dlfs.analytics import from_geojson, label_components, polygonize, rasterize, to_geojson
from dlfs.tiling import TileKey, TileSpec

from oracles import pixel_in_polygon, signed_area

KEY = TileKey(36, 1, 2)
SPEC = TileSpec(8, 0, 10.0)  # raster origin (80, 240)


def test_two_by_two_square():
    lab = np.zeros((8, 8), int)
    lab[2:4, 3:5] = 7
    polys = polygonize(lab, KEY, SPEC)
    assert len(polys) == 1
    p = polys[0]
    assert p.label == 7 and p.holes == []
    assert len(p.exterior) == 5 and p.exterior[0] == p.exterior[-1]
    assert set(p.exterior) == {(110.0, 220.0), (130.0, 220.0), (130.0, 200.0), (110.0, 200.0)}
    assert signed_area(p.exterior) == pytest.approx(400.0)


def test_region_with_hole():
    lab = np.ones((6, 6), int)
    lab[2:4, 2:4] = 2
    polys = {p.label: p for p in polygonize(lab, KEY, TileSpec(6, 0, 1.0))}
    assert len(polys[1].holes) == 1 and polys[2].holes == []
    assert signed_area(polys[1].exterior) == pytest.approx(36.0)
    assert signed_area(polys[1].holes[0]) == pytest.approx(-4.0)
    assert np.array_equal(rasterize(list(polys.values()), KEY, TileSpec(6, 0, 1.0), (6, 6)), lab)


def test_background_never_emitted():
    assert polygonize(np.zeros((8, 8), int), KEY, SPEC) == []
    lab = np.zeros((8, 8), int)
    lab[0, 0] = 3
    assert {p.label for p in polygonize(lab, KEY, SPEC)} == {3}


def test_corner_touching_pixels_stay_apart():
    lab = np.array([[1, 0], [0, 1]])
    polys = polygonize(lab, KEY, TileSpec(2, 0, 1.0))
    assert len(polys) == 2
    assert all(len(p.exterior) == 5 for p in polys)


def test_hole_inside_hole():
    lab = np.ones((9, 9), int)
    lab[1:8, 1:8] = 2
    lab[3:6, 3:6] = 3
    lab[4, 4] = 1  # an island of label 1 inside label 3
    spec = TileSpec(9, 0, 1.0)
    polys = polygonize(lab, KEY, spec)
    assert sorted(p.label for p in polys) == [1, 1, 2, 3]
    assert np.array_equal(rasterize(polys, KEY, spec, lab.shape), lab)


def random_labels(rng, h, w, kind):
    if kind == 0:
        return label_components(rng.random((h, w)) < 0.35, rng.random((h, w)) < 0.95)
    # arbitrary maps: a label may be several components, diagonal contacts everywhere
    return rng.integers(0, int(rng.integers(2, 5)), (h, w))


@settings(max_examples=80)
@given(st.integers(0, 2**32 - 1), st.integers(0, 1))
def test_roundtrip_and_geometry(seed, kind):
    rng = np.random.default_rng(seed)
    h, w = int(rng.integers(1, 14)), int(rng.integers(1, 14))
    lab = random_labels(rng, h, w, kind)
    spec = TileSpec(max(h, w, 2), 0, 10.0, 500.0, -70.0)
    polys = polygonize(lab, KEY, spec)
    assert np.array_equal(rasterize(polys, KEY, spec, lab.shape), lab)
    area = {}
    for p in polys:
        assert p.label > 0
        assert signed_area(p.exterior) > 0
        assert all(signed_area(hole) < 0 for hole in p.holes)
        g = Polygon(p.exterior, p.holes)
        assert g.is_valid, shapely.is_valid_reason(g)
        area[p.label] = area.get(p.label, 0.0) + g.area
    for lab_id, a in area.items():
        assert a == pytest.approx((lab == lab_id).sum() * 100.0)
    if kind == 0:
        # one polygon per component, and each component is a single label
        assert len(polys) == lab.max()


@settings(max_examples=30)
@given(st.integers(0, 2**32 - 1))
def test_rasterize_agrees_with_point_in_polygon(seed):
    rng = np.random.default_rng(seed)
    lab = random_labels(rng, 9, 11, int(seed % 2))
    spec = TileSpec(11, 0, 1.0)
    polys = polygonize(lab, KEY, spec)
    e0, n0 = 11.0, 33.0  # tile (1, 2) spans e 11..22, n 22..33
    for r in range(9):
        for c in range(11):
            x, y = e0 + c + 0.5, n0 - r - 0.5
            hits = [p.label for p in polys if pixel_in_polygon(x, y, [p.exterior, *p.holes])]
            assert hits == ([lab[r, c]] if lab[r, c] else [])


def test_geojson_roundtrip():
    lab = np.ones((6, 6), int)
    lab[2:4, 2:4] = 2
    polys = polygonize(lab, KEY, SPEC)
    doc = to_geojson(polys, KEY)
    text = json.dumps(doc)
    assert doc["type"] == "FeatureCollection"
    assert doc["crs"]["properties"]["name"].endswith("32636")
    props = [f["properties"] for f in doc["features"]]
    assert props[0] == {"label": 1, "zone": 36, "tile_i": 1, "tile_j": 2}
    assert all(f["geometry"]["type"] == "Polygon" for f in doc["features"])
    back = from_geojson(text)
    assert [(p.label, p.exterior, p.holes) for p in back] == [(p.label, p.exterior, p.holes) for p in polys]
    assert np.array_equal(rasterize(back, KEY, SPEC, lab.shape), lab)
