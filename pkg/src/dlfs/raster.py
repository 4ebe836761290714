"""Geo-referenced raster tiles and the pixel-level scene stages.

Pixels are held as a ``(bands, height, width)`` array, so the in-memory
layout is already planar band-major, row-major within a band. The DLT1
codec is lossless and deterministic; its layout (all little-endian):

====== ============================================================
offset field
====== ============================================================
0      magic ``b"DLT1"``
4      version u16 (= 1)
6      width u32, height u32, bands u16
16     dtype u8 (0 = u8, 1 = u16, 2 = f32), flags u8 (bit 0: bitmap)
18     zone i16, tile_i i32, tile_j i32
28     resolution_m f64, origin_easting f64, origin_northing f64
52     timestamp i64, sensor u16
62     border_px u16, tile_px u32 (the header's 6 reserved bytes)
68     band planes, then the MSB-first validity bitmap if flagged,
       then a u64 FNV-1a checksum of everything before it
====== ============================================================
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass, replace

import numpy as np
from scipy import ndimage

from ._fnv import fnv1a64
from .errors import CalibrationError, CodecError
from .tiling import TileKey, TileSpec

MAGIC = b"DLT1"
VERSION = 1
HEADER = struct.Struct("<4sHIIHBBhiidddqHHI")
CHECKSUM = struct.Struct("<Q")
FLAG_BITMAP = 0x01

DTYPES = (np.dtype("u1"), np.dtype("<u2"), np.dtype("<f4"))
DTYPE_CODES = {dt: i for i, dt in enumerate(DTYPES)}

DEFAULT_CLOUD_THRESHOLD = 0.3
DEFAULT_VISIBLE_BANDS = (0, 1, 2)
DEFAULT_EDGE_DEPTH = 2


@dataclass
class RasterTile:
    key: TileKey
    spec: TileSpec
    pixels: np.ndarray  # (bands, height, width)
    valid: np.ndarray  # (height, width) bool
    timestamp: int = 0
    sensor: int = 0

    def __post_init__(self) -> None:
        if self.pixels.ndim != 3:
            raise ValueError("pixels must be (bands, height, width)")
        if self.valid.shape != self.pixels.shape[1:]:
            raise ValueError(f"valid mask {self.valid.shape} does not match pixels {self.pixels.shape}")
        if self.valid.dtype != bool:
            self.valid = self.valid.astype(bool)

    @property
    def bands(self) -> int:
        return self.pixels.shape[0]

    @property
    def height(self) -> int:
        return self.pixels.shape[1]

    @property
    def width(self) -> int:
        return self.pixels.shape[2]

    def with_valid(self, valid: np.ndarray) -> RasterTile:
        return replace(self, valid=valid)

    def equals(self, other: RasterTile) -> bool:
        """Field-for-field and bit-for-bit equality."""
        return (
            self.key == other.key
            and self.spec == other.spec
            and self.timestamp == other.timestamp
            and self.sensor == other.sensor
            and self.pixels.dtype == other.pixels.dtype
            and self.pixels.shape == other.pixels.shape
            and self.pixels.tobytes() == other.pixels.tobytes()
            and np.array_equal(self.valid, other.valid)
        )


# codec

def encode_tile(t: RasterTile) -> bytes:
    dt = t.pixels.dtype.newbyteorder("<") if t.pixels.dtype.byteorder == ">" else t.pixels.dtype
    if dt not in DTYPE_CODES:
        raise CodecError(f"unsupported dtype {t.pixels.dtype}")
    if t.bands < 1 or t.width < 1 or t.height < 1:
        raise CodecError(f"tile must have at least one band and pixel, got {t.pixels.shape}")
    all_valid = bool(t.valid.all())
    header = HEADER.pack(
        MAGIC, VERSION, t.width, t.height, t.bands,
        DTYPE_CODES[dt], 0 if all_valid else FLAG_BITMAP,
        t.key.zone, t.key.i, t.key.j,
        t.spec.resolution_m, t.spec.origin_easting_m, t.spec.origin_northing_m,
        t.timestamp, t.sensor, t.spec.border_px, t.spec.tile_px,
    )
    parts = [header, np.ascontiguousarray(t.pixels, dtype=dt).tobytes()]
    if not all_valid:
        parts.append(np.packbits(t.valid.ravel(), bitorder="big").tobytes())
    body = b"".join(parts)
    return body + CHECKSUM.pack(fnv1a64(body))


def decode_tile(buf: bytes) -> RasterTile:
    buf = memoryview(buf)
    if len(buf) < HEADER.size + CHECKSUM.size:
        raise CodecError("truncated DLT1 header")
    (magic, version, width, height, bands, code, flags, zone, ti, tj,
     res, oe, on, ts, sensor, border, tile_px) = HEADER.unpack_from(buf)
    if magic != MAGIC:
        raise CodecError(f"bad magic {bytes(magic)!r}")
    if version != VERSION:
        raise CodecError(f"unsupported DLT1 version {version}")
    if code >= len(DTYPES) or flags & ~FLAG_BITMAP:
        raise CodecError("unknown dtype code or flag bits")
    dt = DTYPES[code]
    npix = width * height
    nbody = HEADER.size + bands * npix * dt.itemsize
    if flags & FLAG_BITMAP:
        nbody += (npix + 7) // 8
    if len(buf) != nbody + CHECKSUM.size:
        raise CodecError(f"DLT1 payload is {len(buf)} bytes, expected {nbody + CHECKSUM.size}")
    (stored,) = CHECKSUM.unpack_from(buf, nbody)
    if fnv1a64(buf[:nbody]) != stored:
        raise CodecError("DLT1 checksum mismatch")
    off = HEADER.size
    pixels = np.frombuffer(buf, dtype=dt, count=bands * npix, offset=off).reshape(bands, height, width)
    if flags & FLAG_BITMAP:
        bits = np.frombuffer(buf, dtype=np.uint8, offset=off + pixels.nbytes, count=(npix + 7) // 8)
        valid = np.unpackbits(bits, count=npix, bitorder="big").astype(bool).reshape(height, width)
    else:
        valid = np.ones((height, width), dtype=bool)
    try:
        key = TileKey(zone, ti, tj)
        spec = TileSpec(tile_px, border, res, oe, on)
    except ValueError as e:
        raise CodecError(f"invalid DLT1 georeference: {e}") from e
    return RasterTile(key, spec, pixels.astype(dt.newbyteorder("="), copy=True), valid, ts, sensor)


# pixel stages

def cloud_mask(
    t: RasterTile,
    threshold: float = DEFAULT_CLOUD_THRESHOLD,
    visible_bands: tuple[int, ...] = DEFAULT_VISIBLE_BANDS,
) -> np.ndarray:
    """Valid pixels whose every visible band exceeds ``threshold``."""
    if not visible_bands:
        raise ValueError("no visible bands configured")
    vis = t.pixels[list(visible_bands)]
    return t.valid & np.all(vis > threshold, axis=0)


def mask_clouds(t: RasterTile, threshold: float = DEFAULT_CLOUD_THRESHOLD,
                visible_bands: tuple[int, ...] = DEFAULT_VISIBLE_BANDS) -> tuple[RasterTile, np.ndarray]:
    """Return the tile with cloudy pixels removed from ``valid``, and the cloud mask."""
    cloud = cloud_mask(t, threshold, visible_bands)
    return t.with_valid(t.valid & ~cloud), cloud


def ndvi(red: np.ndarray, nir: np.ndarray, valid: np.ndarray | None = None) -> tuple[np.ndarray, np.ndarray]:
    """``(nir - red) / (nir + red)`` and its validity; invalid pixels hold NaN."""
    if red.shape != nir.shape or (valid is not None and valid.shape != red.shape):
        raise ValueError("red, nir and valid must share a shape")
    red = red.astype(np.float64)
    nir = nir.astype(np.float64)
    denom = nir + red
    ok = denom > 0
    if valid is not None:
        ok &= valid
    out = np.full(red.shape, np.nan)
    np.divide(nir - red, denom, out=out, where=ok)
    return out, ok


@dataclass(frozen=True)
class PixelRect:
    row: int
    col: int
    height: int
    width: int


def valid_bounds(valid: np.ndarray | RasterTile) -> PixelRect | None:
    """Smallest rectangle holding every valid pixel, or ``None`` if there are none."""
    mask = valid.valid if isinstance(valid, RasterTile) else valid
    rows = np.flatnonzero(mask.any(axis=1))
    if rows.size == 0:
        return None
    cols = np.flatnonzero(mask.any(axis=0))
    return PixelRect(int(rows[0]), int(cols[0]), int(rows[-1] - rows[0] + 1), int(cols[-1] - cols[0] + 1))


def erode_valid(valid: np.ndarray, depth: int) -> np.ndarray:
    if depth < 0:
        raise ValueError("depth must be >= 0")
    if depth == 0 or not valid.any():
        return valid.copy()
    # outside the raster counts as invalid, so the raster edge erodes too
    return ndimage.binary_erosion(valid, structure=np.ones((3, 3), bool), iterations=depth, border_value=0)


def clean_edges(t: RasterTile, depth: int = DEFAULT_EDGE_DEPTH) -> RasterTile:
    return t.with_valid(erode_valid(t.valid, depth))


def calibrate_toa(
    dn: np.ndarray,
    gain: float,
    offset: float,
    sun_zenith_deg: float,
    earth_sun_dist_au: float,
    valid: np.ndarray | None = None,
) -> np.ndarray:
    """Top-of-atmosphere reflectance ``(gain * DN + offset) * d**2 / cos(zenith)``.

    Pixels outside ``valid`` come back as 0.
    """
    if not sun_zenith_deg < 90.0:
        raise CalibrationError(f"sun at or below the horizon (zenith {sun_zenith_deg} deg)")
    scale = earth_sun_dist_au**2 / math.cos(math.radians(sun_zenith_deg))
    rho = (gain * dn.astype(np.float64) + offset) * scale
    if valid is not None:
        rho = np.where(valid, rho, 0.0)
    return rho


def calibrate_tile(t: RasterTile, gains, offsets, sun_zenith_deg: float, earth_sun_dist_au: float) -> RasterTile:
    """Calibrate every band; the result is a float32 tile with the same mask."""
    if len(gains) != t.bands or len(offsets) != t.bands:
        raise CalibrationError(f"need {t.bands} gains and offsets, got {len(gains)} and {len(offsets)}")
    out = np.empty(t.pixels.shape, dtype=np.float32)
    for b in range(t.bands):
        out[b] = calibrate_toa(t.pixels[b], gains[b], offsets[b], sun_zenith_deg, earth_sun_dist_au, t.valid)
    return replace(t, pixels=out)
