from __future__ import annotations

import math

import pytest
from hypothesis import assume, given
from hypothesis import strategies as st

from dlfs.errors import OutOfTile
from dlfs.tiling import (
    Rect,
    TileKey,
    TileSpec,
    geo_to_pixel,
    lonlat_to_utm,
    pixel_to_geo,
    span_count,
    tile_bounds,
    tile_for_lonlat,
    tile_index,
    utm_to_lonlat,
    webmercator_tile_count,
    zone_for_lonlat,
)

from oracles import K0, meridian_arc, redfearn_utm

SPEC = TileSpec(4096, 0, 10.0)


@pytest.mark.parametrize("lon, zone", [(-180, 1), (0, 31), (33.0, 36), (180, 1), (179.999, 60), (-174, 2)])
def test_zone_examples(lon, zone):
    assert zone_for_lonlat(lon, 10) == zone


@given(st.floats(-180, 180))
def test_zone_matches_bucketing(lon):
    # brute force: scan the sixty 6-degree bins
    expect = next(z for z in range(1, 61) if -180 + 6 * (z - 1) <= lon < -180 + 6 * z) if lon < 180 else 1
    assert zone_for_lonlat(lon, 0.0) == expect


@pytest.mark.parametrize("lat", [-80, 84, 90, -90])
def test_zone_latitude_range(lat):
    with pytest.raises(ValueError):
        zone_for_lonlat(0, lat)


def test_tile_index_examples():
    assert tile_index(0, 0, SPEC) == (0, 0)
    assert tile_index(40960, 0, SPEC) == (1, 0)
    assert tile_index(40959.999, 0, SPEC) == (0, 0)
    assert tile_index(0, -1, SPEC) == (0, -1)
    off = TileSpec(4096, 0, 10.0, origin_easting_m=100.0, origin_northing_m=-50.0)
    assert tile_index(100.0, -50.0, off) == (0, 0)
    assert tile_index(99.0, -51.0, off) == (-1, -1)


def test_tile_bounds_examples():
    assert tile_bounds(TileKey(36, 0, 0), SPEC) == Rect(0, 0, 40960, 40960)
    b = TileSpec(4096, 16, 10.0)
    assert tile_bounds(TileKey(36, 0, 0), b, with_border=True) == Rect(-160, -160, 41120, 41120)
    assert tile_bounds(TileKey(36, 0, 0), b) == Rect(0, 0, 40960, 40960)
    r0, r1 = tile_bounds(TileKey(1, 0, 0), SPEC), tile_bounds(TileKey(1, 1, 0), SPEC)
    assert r0.e_max == r1.e_min and not r0.intersects(r1)


def test_spec_validation():
    with pytest.raises(ValueError):
        TileSpec(32, 16, 10.0)
    with pytest.raises(ValueError):
        TileSpec(32, 0, 0.0)
    with pytest.raises(ValueError):
        TileKey(0, 0, 0)
    with pytest.raises(ValueError):
        TileKey(61, 0, 0)


coords = st.floats(-5e6, 5e6, allow_nan=False)
specs = st.builds(TileSpec, st.sampled_from([16, 256, 4096]), st.sampled_from([0, 2, 7]),
                  st.sampled_from([0.5, 10.0, 30.0, 250.0]), st.floats(-1e4, 1e4), st.floats(-1e4, 1e4))


@given(coords, coords, specs)
def test_partition(e, n, spec):
    i, j = tile_index(e, n, spec)
    owners = [(a, b) for a in (i - 1, i, i + 1) for b in (j - 1, j, j + 1)
              if tile_bounds(TileKey(1, a, b), spec).contains(e, n)]
    assert owners == [(i, j)]


@given(coords, coords, specs)
def test_border_overlap(e, n, spec):
    i, j = tile_index(e, n, spec)
    holders = {(a, b) for a in range(i - 1, i + 2) for b in range(j - 1, j + 2)
               if tile_bounds(TileKey(1, a, b), spec, with_border=True).contains(e, n)}
    r = tile_bounds(TileKey(1, i, j), spec)
    bm = spec.border_m
    west, east = e - r.e_min < bm, r.e_max - e <= bm
    south, north = n - r.n_min < bm, r.n_max - n <= bm
    # expected: own tile plus neighbors across each nearby edge (and the corner)
    di = [0] + ([-1] if west else []) + ([1] if east else [])
    dj = [0] + ([-1] if south else []) + ([1] if north else [])
    expect = {(i + a, j + b) for a in di for b in dj}
    assume(all(abs(x) > 1e-6 for x in (e - r.e_min - bm, r.e_max - e - bm, n - r.n_min - bm, r.n_max - n - bm)))
    assert holders == expect


def test_geo_to_pixel_examples():
    spec = TileSpec(64, 4, 10.0)
    key = TileKey(36, 2, -3)
    r = tile_bounds(key, spec)
    # NW corner of the interior sits at (border, border)
    assert geo_to_pixel(r.e_min, r.n_max - 1e-6, key, spec) == (4, 4)
    assert geo_to_pixel(r.e_min + 0.5, r.n_max - 0.5, key, spec) == (4, 4)
    with pytest.raises(OutOfTile):
        geo_to_pixel(r.e_max + 100, r.n_min + 100, key, spec)
    with pytest.raises(OutOfTile):
        geo_to_pixel(r.e_min - 41, r.n_max, key, spec)


@given(st.integers(0, 71), st.integers(0, 71), st.integers(-50, 50), st.integers(-50, 50))
def test_pixel_roundtrip(row, col, i, j):
    spec = TileSpec(64, 4, 10.0, 123.0, -77.0)
    key = TileKey(12, i, j)
    e, n = pixel_to_geo(row, col, key, spec)
    assert geo_to_pixel(e, n, key, spec) == (row, col)


def test_span_counts():
    assert span_count(668_000, TileSpec(4096, 0, 10.0)) == 17
    assert span_count(10_000_000, TileSpec(4096, 0, 250.0)) == 10
    assert abs(span_count(10_000_000, TileSpec(4096, 0, 10.0)) - 244) <= 1
    assert span_count(40960, SPEC) == 1 and span_count(40961, SPEC) == 2
    with pytest.raises(ValueError):
        span_count(0, SPEC)


def test_webmercator():
    assert webmercator_tile_count(0) == 1
    assert webmercator_tile_count(3) == 64
    for L in range(31):
        assert webmercator_tile_count(L + 1) == 4 * webmercator_tile_count(L)
    with pytest.raises(ValueError):
        webmercator_tile_count(-1)
    with pytest.raises(OverflowError):
        webmercator_tile_count(32)


# projection

def test_reference_points():
    # equator at a zone edge: a published textbook value
    z, e, n = lonlat_to_utm(36.0, 0.0, zone=36)
    assert e == pytest.approx(833978.557, abs=1e-3) and n == pytest.approx(0.0, abs=1e-6)
    # on the central meridian northing is k0 times the meridian arc
    z, e, n = lonlat_to_utm(33.0, 45.0)
    assert z == 36 and e == pytest.approx(500000.0, abs=1e-6)
    assert n == pytest.approx(K0 * 4984944.378, abs=1e-3)
    assert n == pytest.approx(K0 * meridian_arc(math.radians(45.0)), abs=1e-4)


@given(st.floats(-79.5, 83.5), st.floats(-2.99, 2.99), st.integers(1, 60))
def test_forward_matches_redfearn(lat, dlon, zone):
    lon = (zone * 6 - 183) + dlon
    if lon > 180:
        lon -= 360
    _, e, n = lonlat_to_utm(lon, lat, zone=zone)
    eo, no = redfearn_utm(lon, lat, zone)
    assert e == pytest.approx(eo, abs=2e-3)
    assert n == pytest.approx(no, abs=2e-3)


@given(st.floats(-79.9, 83.9), st.floats(-180, 179.999))
def test_inverse_roundtrip(lat, lon):
    z, e, n = lonlat_to_utm(lon, lat)
    lon2, lat2 = utm_to_lonlat(z, e, n)
    assert lat2 == pytest.approx(lat, abs=1e-9)
    assert (lon2 - lon + 180) % 360 - 180 == pytest.approx(0.0, abs=1e-9)


def test_southern_hemisphere_negative_j():
    key = tile_for_lonlat(33.0, -10.0, SPEC)
    assert key.zone == 36 and key.j < 0
    assert tile_for_lonlat(33.0, 10.0, SPEC).j >= 0
