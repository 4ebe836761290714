"""UTM tiling grid and Web-Mercator level arithmetic.

A :class:`TileSpec` fixes the grid shared by all 60 UTM zones: tile size
in pixels, border (overlap) in pixels, pixel size in meters and the grid
origin. Cells are half-open, ``[lower, upper)`` on both axes. Northings
are signed from the equator, so tiles south of it have negative ``j``.

Geographic conversion uses the Krüger series for the transverse Mercator
projection on WGS84 (terms to n**6), which is accurate to well under a
millimeter within a UTM zone.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

from .errors import OutOfTile

# WGS84
A_AXIS = 6378137.0
FLATTENING = 1 / 298.257223563
K0 = 0.9996
FALSE_EASTING = 500000.0

MAX_WEBMERCATOR_LEVEL = 31  # 4**31 is the largest count that fits a signed 64-bit integer


@dataclass(frozen=True)
class TileSpec:
    tile_px: int = 4096
    border_px: int = 0
    resolution_m: float = 10.0
    origin_easting_m: float = 0.0
    origin_northing_m: float = 0.0

    def __post_init__(self) -> None:
        if self.border_px < 0 or self.tile_px <= 2 * self.border_px:
            raise ValueError("need tile_px > 2 * border_px >= 0")
        if not self.resolution_m > 0:
            raise ValueError("resolution_m must be positive")

    @property
    def extent_m(self) -> float:
        return self.tile_px * self.resolution_m

    @property
    def border_m(self) -> float:
        return self.border_px * self.resolution_m

    @property
    def raster_px(self) -> int:
        """Pixels per side of a bordered tile raster."""
        return self.tile_px + 2 * self.border_px


@dataclass(frozen=True, order=True)
class TileKey:
    zone: int
    i: int
    j: int

    def __post_init__(self) -> None:
        if not 1 <= self.zone <= 60:
            raise ValueError(f"UTM zone must be in 1..60, got {self.zone}")


@dataclass(frozen=True)
class Rect:
    """Half-open easting/northing rectangle."""

    e_min: float
    n_min: float
    e_max: float
    n_max: float

    def contains(self, e: float, n: float) -> bool:
        return self.e_min <= e < self.e_max and self.n_min <= n < self.n_max

    def intersects(self, other: Rect) -> bool:
        return (
            self.e_min < other.e_max and other.e_min < self.e_max
            and self.n_min < other.n_max and other.n_min < self.n_max
        )


def zone_for_lonlat(lon_deg: float, lat_deg: float) -> int:
    if not -180.0 <= lon_deg <= 180.0:
        raise ValueError(f"longitude out of range: {lon_deg}")
    if not -80.0 < lat_deg < 84.0:
        raise ValueError(f"latitude outside UTM coverage (-80, 84): {lat_deg}")
    if lon_deg == 180.0:
        return 1
    z = int(math.floor((lon_deg + 180.0) / 6.0))
    # the division can round across a bin edge; the edges themselves are exact
    if lon_deg < -180.0 + 6.0 * z:
        z -= 1
    elif lon_deg >= -180.0 + 6.0 * (z + 1):
        z += 1
    return z + 1


def central_meridian(zone: int) -> float:
    return zone * 6.0 - 183.0


def _edge(origin: float, k: int, ext: float) -> float:
    # the one expression for cell edges, so neighbors share edges exactly
    return origin + k * ext


def _cell(x: float, origin: float, ext: float) -> int:
    k = math.floor((x - origin) / ext)
    if x < _edge(origin, k, ext):
        k -= 1
    elif x >= _edge(origin, k + 1, ext):
        k += 1
    return k


def tile_index(easting_m: float, northing_m: float, spec: TileSpec) -> tuple[int, int]:
    ext = spec.extent_m
    return _cell(easting_m, spec.origin_easting_m, ext), _cell(northing_m, spec.origin_northing_m, ext)


def tile_bounds(key: TileKey, spec: TileSpec, with_border: bool = False) -> Rect:
    ext, oe, on = spec.extent_m, spec.origin_easting_m, spec.origin_northing_m
    b = spec.border_m if with_border else 0.0
    return Rect(
        _edge(oe, key.i, ext) - b, _edge(on, key.j, ext) - b,
        _edge(oe, key.i + 1, ext) + b, _edge(on, key.j + 1, ext) + b,
    )


def raster_origin(key: TileKey, spec: TileSpec) -> tuple[float, float]:
    """Easting/northing of the outer north-west corner of the bordered raster."""
    r = tile_bounds(key, spec, with_border=True)
    return r.e_min, r.n_max


def geo_to_pixel(easting: float, northing: float, key: TileKey, spec: TileSpec) -> tuple[int, int]:
    """Row/column of the bordered raster pixel containing a point.

    Row 0 is the northern edge. Raises :class:`OutOfTile` for points
    outside the bordered raster.
    """
    e0, n0 = raster_origin(key, spec)
    res = spec.resolution_m
    col = math.floor((easting - e0) / res)
    row = math.floor((n0 - northing) / res)
    size = spec.raster_px
    if not (0 <= row < size and 0 <= col < size):
        raise OutOfTile(f"({easting}, {northing}) is outside tile {key}")
    return row, col


def pixel_to_geo(row: float, col: float, key: TileKey, spec: TileSpec) -> tuple[float, float]:
    """Easting/northing of a pixel center."""
    e0, n0 = raster_origin(key, spec)
    res = spec.resolution_m
    return e0 + (col + 0.5) * res, n0 - (row + 0.5) * res


def span_count(distance_m: float, spec: TileSpec) -> int:
    if not distance_m > 0:
        raise ValueError("distance must be positive")
    return math.ceil(distance_m / spec.extent_m)


def webmercator_tile_count(level: int) -> int:
    if level < 0:
        raise ValueError("level must be >= 0")
    if level > MAX_WEBMERCATOR_LEVEL:
        raise OverflowError(f"4**{level} tiles does not fit in 64 bits")
    return 4**level


# Krüger series coefficients, Karney (2011) to sixth order in n.

_N = FLATTENING / (2 - FLATTENING)
_E = math.sqrt(FLATTENING * (2 - FLATTENING))
_A = A_AXIS / (1 + _N) * (1 + _N**2 / 4 + _N**4 / 64 + _N**6 / 256)


def _series(n: float) -> tuple[list[float], list[float]]:
    n2, n3, n4, n5, n6 = n**2, n**3, n**4, n**5, n**6
    alpha = [
        n / 2 - 2 * n2 / 3 + 5 * n3 / 16 + 41 * n4 / 180 - 127 * n5 / 288 + 7891 * n6 / 37800,
        13 * n2 / 48 - 3 * n3 / 5 + 557 * n4 / 1440 + 281 * n5 / 630 - 1983433 * n6 / 1935360,
        61 * n3 / 240 - 103 * n4 / 140 + 15061 * n5 / 26880 + 167603 * n6 / 181440,
        49561 * n4 / 161280 - 179 * n5 / 168 + 6601661 * n6 / 7257600,
        34729 * n5 / 80640 - 3418889 * n6 / 1995840,
        212378941 * n6 / 319334400,
    ]
    beta = [
        n / 2 - 2 * n2 / 3 + 37 * n3 / 96 - n4 / 360 - 81 * n5 / 512 + 96199 * n6 / 604800,
        n2 / 48 + n3 / 15 - 437 * n4 / 1440 + 46 * n5 / 105 - 1118711 * n6 / 3870720,
        17 * n3 / 480 - 37 * n4 / 840 - 209 * n5 / 4480 + 5569 * n6 / 90720,
        4397 * n4 / 161280 - 11 * n5 / 504 - 830251 * n6 / 7257600,
        4583 * n5 / 161280 - 108847 * n6 / 3991680,
        20648693 * n6 / 638668800,
    ]
    return alpha, beta


_ALPHA, _BETA = _series(_N)


def lonlat_to_utm(lon_deg: float, lat_deg: float, zone: int | None = None) -> tuple[int, float, float]:
    """Project to ``(zone, easting, northing)``; northing is negative south of the equator."""
    if zone is None:
        zone = zone_for_lonlat(lon_deg, lat_deg)
    phi = math.radians(lat_deg)
    lam = math.radians((lon_deg - central_meridian(zone) + 180.0) % 360.0 - 180.0)
    t = math.sinh(math.atanh(math.sin(phi)) - _E * math.atanh(_E * math.sin(phi)))
    xi_p = math.atan2(t, math.cos(lam))
    eta_p = math.atanh(math.sin(lam) / math.sqrt(1 + t * t))
    xi, eta = xi_p, eta_p
    for j, a in enumerate(_ALPHA, start=1):
        xi += a * math.sin(2 * j * xi_p) * math.cosh(2 * j * eta_p)
        eta += a * math.cos(2 * j * xi_p) * math.sinh(2 * j * eta_p)
    return zone, FALSE_EASTING + K0 * _A * eta, K0 * _A * xi


def utm_to_lonlat(zone: int, easting: float, northing: float) -> tuple[float, float]:
    """Inverse of :func:`lonlat_to_utm` (signed northing)."""
    xi = northing / (K0 * _A)
    eta = (easting - FALSE_EASTING) / (K0 * _A)
    xi_p, eta_p = xi, eta
    for j, b in enumerate(_BETA, start=1):
        xi_p -= b * math.sin(2 * j * xi) * math.cosh(2 * j * eta)
        eta_p -= b * math.cos(2 * j * xi) * math.sinh(2 * j * eta)
    sinh_eta, sin_xi, cos_xi = math.sinh(eta_p), math.sin(xi_p), math.cos(xi_p)
    tau_p = sin_xi / math.sqrt(sinh_eta**2 + cos_xi**2)
    # Newton iteration for tan(latitude) from tan(conformal latitude)
    e2 = _E * _E
    tau = tau_p
    for _ in range(10):
        sigma = math.sinh(_E * math.atanh(_E * tau / math.sqrt(1 + tau * tau)))
        tau_i = tau * math.sqrt(1 + sigma * sigma) - sigma * math.sqrt(1 + tau * tau)
        d = (tau_p - tau_i) / math.sqrt(1 + tau_i * tau_i) * (1 + (1 - e2) * tau * tau) / (
            (1 - e2) * math.sqrt(1 + tau * tau)
        )
        tau += d
        if abs(d) < 1e-14:
            break
    lat = math.degrees(math.atan(tau))
    lon = central_meridian(zone) + math.degrees(math.atan2(sinh_eta, cos_xi))
    return lon, lat


def tile_for_lonlat(lon_deg: float, lat_deg: float, spec: TileSpec) -> TileKey:
    zone, e, n = lonlat_to_utm(lon_deg, lat_deg)
    i, j = tile_index(e, n, spec)
    return TileKey(zone, i, j)
