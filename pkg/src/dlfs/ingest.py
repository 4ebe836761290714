"""Scene ingest: trim, clean, tile, calibrate, encode, store.

Everything moves buffer to buffer. A scene is decoded from bytes fetched
out of the object store, tiles are produced one at a time, and each
encoded tile goes straight back to the store with a metadata record at::

    /tiles/z<zone>/<i>/<j>/<sensor>_<timestamp>.dlt

Re-running a scene rewrites identical bytes under identical paths.
"""

from __future__ import annotations

import json
import logging
import math
import struct
from collections.abc import Iterator
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import CalibrationError, CodecError, DlfsError, ZoneMismatch
from .metastore import FILE, FileMeta, MetaService
from .objstore import ObjectKey, ObjectStore
from .raster import (
    DEFAULT_EDGE_DEPTH,
    MAGIC as DLT1_MAGIC,
    RasterTile,
    calibrate_tile,
    calibrate_toa,
    decode_tile,
    encode_tile,
    erode_valid,
    valid_bounds,
)
from .tiling import Rect, TileKey, TileSpec, raster_origin, tile_bounds

log = logging.getLogger(__name__)

RAWG_MAGIC = b"RAWG"
DEFAULT_BUCKET = "tiles"


@dataclass(frozen=True)
class SceneMeta:
    sensor: int
    timestamp: int
    gains: tuple[float, ...]
    offsets: tuple[float, ...]
    sun_zenith_deg: float
    earth_sun_dist_au: float = 1.0


@dataclass
class Scene:
    """A full scene in one UTM zone, georeferenced by its north-west corner."""

    pixels: np.ndarray  # (bands, height, width)
    valid: np.ndarray
    zone: int
    ul_easting: float
    ul_northing: float
    resolution_m: float
    meta: SceneMeta
    calibrated: bool = False

    @property
    def bands(self) -> int:
        return self.pixels.shape[0]

    def footprint(self, rect=None) -> Rect:
        """Easting/northing rectangle of the whole raster, or of a pixel rect."""
        h, w = self.pixels.shape[1:]
        r0, c0, rh, cw = (0, 0, h, w) if rect is None else (rect.row, rect.col, rect.height, rect.width)
        res = self.resolution_m
        return Rect(
            self.ul_easting + c0 * res,
            self.ul_northing - (r0 + rh) * res,
            self.ul_easting + (c0 + cw) * res,
            self.ul_northing - r0 * res,
        )


def trim_to_valid(s: Scene) -> Scene | None:
    """Crop to the bounding rectangle of valid data; ``None`` if nothing is valid."""
    vb = valid_bounds(s.valid)
    if vb is None:
        return None
    rows = slice(vb.row, vb.row + vb.height)
    cols = slice(vb.col, vb.col + vb.width)
    res = s.resolution_m
    return replace(
        s,
        pixels=s.pixels[:, rows, cols],
        valid=s.valid[rows, cols],
        ul_easting=s.ul_easting + vb.col * res,
        ul_northing=s.ul_northing - vb.row * res,
    )


def _check_calibration(s: Scene) -> None:
    m = s.meta
    if len(m.gains) != s.bands or len(m.offsets) != s.bands:
        raise CalibrationError(f"scene has {s.bands} bands but {len(m.gains)} gains / {len(m.offsets)} offsets")
    if not m.sun_zenith_deg < 90.0:
        raise CalibrationError(f"sun at or below the horizon (zenith {m.sun_zenith_deg} deg)")


def calibrate_scene(s: Scene) -> Scene:
    m = s.meta
    _check_calibration(s)
    out = np.empty(s.pixels.shape, dtype=np.float32)
    for b in range(s.bands):
        out[b] = calibrate_toa(s.pixels[b], m.gains[b], m.offsets[b], m.sun_zenith_deg, m.earth_sun_dist_au, s.valid)
    return replace(s, pixels=out, calibrated=True)


def _index_range(lo: float, hi: float, origin: float, ext: float, border: float) -> range:
    first = math.floor((lo - origin - border) / ext)
    last = math.ceil((hi - origin + border) / ext) - 1
    return range(first, last + 1)


def tile_scene(s: Scene, spec: TileSpec, zone: int | None = None) -> Iterator[RasterTile]:
    """Cut a scene into grid tiles by nearest-neighbor alignment.

    Yields one tile per key whose bordered bounds intersect the scene's
    valid rectangle and that receives at least one valid pixel. Pixels
    the scene does not cover are invalid and zero.
    """
    if zone is not None and zone != s.zone:
        raise ZoneMismatch(f"scene is in zone {s.zone}, target tiles are in zone {zone}")
    vb = valid_bounds(s.valid)
    if vb is None:
        return
    area = s.footprint(vb)
    ext, border = spec.extent_m, spec.border_m
    h, w = s.valid.shape
    n = spec.raster_px
    centers = np.arange(n) + 0.5
    for j in reversed(_index_range(area.n_min, area.n_max, spec.origin_northing_m, ext, border)):
        for i in _index_range(area.e_min, area.e_max, spec.origin_easting_m, ext, border):
            key = TileKey(s.zone, i, j)
            if not tile_bounds(key, spec, with_border=True).intersects(area):
                continue
            e0, n0 = raster_origin(key, spec)
            cols = np.floor((e0 + centers * spec.resolution_m - s.ul_easting) / s.resolution_m).astype(np.int64)
            rows = np.floor((s.ul_northing - (n0 - centers * spec.resolution_m)) / s.resolution_m).astype(np.int64)
            col_in = (cols >= 0) & (cols < w)
            row_in = (rows >= 0) & (rows < h)
            if not (col_in.any() and row_in.any()):
                continue
            ix = np.ix_(np.clip(rows, 0, h - 1), np.clip(cols, 0, w - 1))
            valid = s.valid[ix] & row_in[:, None] & col_in[None, :]
            if not valid.any():
                continue
            pixels = s.pixels[(slice(None), *ix)]
            pixels[:, ~valid] = 0
            yield RasterTile(key, spec, pixels, valid, s.meta.timestamp, s.meta.sensor)


def tile_path(key: TileKey, sensor: int, timestamp: int) -> str:
    return f"/tiles/z{key.zone}/{key.i}/{key.j}/{sensor}_{timestamp}.dlt"


@dataclass
class TileResult:
    path: str
    key: TileKey
    etag: str | None = None
    size: int = 0
    error: str | None = None

    @property
    def ok(self) -> bool:
        return self.error is None


@dataclass
class IngestReport:
    tiles: list[TileResult] = field(default_factory=list)

    @property
    def stored_paths(self) -> list[str]:
        return [t.path for t in self.tiles if t.ok]

    @property
    def failed(self) -> list[TileResult]:
        return [t for t in self.tiles if not t.ok]

    def to_json(self) -> dict:
        return {
            "stored": len(self.stored_paths),
            "failed": len(self.failed),
            "tiles": [
                {"path": t.path, "zone": t.key.zone, "i": t.key.i, "j": t.key.j,
                 "etag": t.etag, "size": t.size, "error": t.error}
                for t in self.tiles
            ],
        }


def process_scene(
    s: Scene,
    spec: TileSpec,
    store: ObjectStore,
    meta: MetaService,
    *,
    bucket: str = DEFAULT_BUCKET,
    edge_depth: int = DEFAULT_EDGE_DEPTH,
) -> IngestReport:
    """Run the full pipeline for one scene and store every tile.

    Calibration problems abort before anything is written. Store or
    metadata failures are recorded per tile and do not stop the others.
    """
    report = IngestReport()
    m = s.meta
    if not s.calibrated:
        _check_calibration(s)
    trimmed = trim_to_valid(s)
    if trimmed is None:
        return report
    cleaned = replace(trimmed, valid=erode_valid(trimmed.valid, edge_depth))
    # calibration is per pixel, so doing it tile by tile gives the same bytes
    # while only ever holding one float tile beside the source scene
    for raw in tile_scene(cleaned, spec):
        tile = raw if s.calibrated else calibrate_tile(raw, m.gains, m.offsets, m.sun_zenith_deg, m.earth_sun_dist_au)
        path = tile_path(tile.key, tile.sensor, tile.timestamp)
        res = TileResult(path, tile.key)
        try:
            blob = encode_tile(tile)
            okey = ObjectKey(bucket, path.lstrip("/"))
            om = store.put(okey, blob)
            meta.set_meta(FileMeta(path, FILE, om.size, float(tile.timestamp), okey))
            res.etag, res.size = om.etag, om.size
        except (DlfsError, OSError) as e:
            log.warning("tile %s failed: %s", path, e)
            res.error = f"{type(e).__name__}: {e}"
        report.tiles.append(res)
    return report


# source scene formats

def encode_rawgrid(
    pixels: np.ndarray,
    *,
    zone: int,
    ul_easting: float,
    ul_northing: float,
    resolution_m: float,
    nodata: float | None = None,
) -> bytes:
    """Fixture format: ``RAWG``, u32 header length, JSON header, planar pixels."""
    dt = pixels.dtype.newbyteorder("<")
    header = json.dumps({
        "width": pixels.shape[2], "height": pixels.shape[1], "bands": pixels.shape[0],
        "dtype": dt.str, "zone": zone, "ul_easting": ul_easting, "ul_northing": ul_northing,
        "resolution_m": resolution_m, "nodata": nodata,
    }, sort_keys=True).encode()
    return RAWG_MAGIC + struct.pack("<I", len(header)) + header + pixels.astype(dt).tobytes()


def decode_rawgrid(buf: bytes) -> tuple[np.ndarray, np.ndarray, dict]:
    if buf[:4] != RAWG_MAGIC:
        raise CodecError("not a RAWG buffer")
    (hlen,) = struct.unpack_from("<I", buf, 4)
    hdr = json.loads(bytes(buf[8:8 + hlen]))
    dt = np.dtype(hdr["dtype"])
    shape = (hdr["bands"], hdr["height"], hdr["width"])
    count = shape[0] * shape[1] * shape[2]
    if len(buf) != 8 + hlen + count * dt.itemsize:
        raise CodecError("RAWG payload size does not match header")
    pixels = np.frombuffer(buf, dtype=dt, count=count, offset=8 + hlen).reshape(shape).astype(dt.newbyteorder("="))
    if hdr.get("nodata") is None:
        valid = np.ones(shape[1:], dtype=bool)
    else:
        valid = ~np.all(pixels == hdr["nodata"], axis=0)
    return pixels, valid, hdr


def decode_scene(buf: bytes, meta: SceneMeta, zone: int | None = None) -> Scene:
    """Build a scene from DLT1 or RAWG bytes."""
    if bytes(buf[:4]) == DLT1_MAGIC:
        t = decode_tile(buf)
        e0, n0 = raster_origin(t.key, t.spec)
        s = Scene(t.pixels, t.valid, t.key.zone, e0, n0, t.spec.resolution_m, meta)
    else:
        pixels, valid, hdr = decode_rawgrid(buf)
        s = Scene(pixels, valid, hdr["zone"], hdr["ul_easting"], hdr["ul_northing"], hdr["resolution_m"], meta)
    if zone is not None and zone != s.zone:
        raise ZoneMismatch(f"manifest says zone {zone}, source is in zone {s.zone}")
    return s


def scene_meta_from_manifest(m: dict) -> SceneMeta:
    cal = m["calibration"]
    return SceneMeta(
        sensor=int(m["sensor"]),
        timestamp=int(m["timestamp"]),
        gains=tuple(float(g) for g in cal["gain"]),
        offsets=tuple(float(o) for o in cal["offset"]),
        sun_zenith_deg=float(cal["sun_zenith_deg"]),
        earth_sun_dist_au=float(cal.get("earth_sun_dist_au", 1.0)),
    )


def load_scene(store: ObjectStore, manifest: dict) -> Scene:
    """Fetch and decode the source named by an ingest manifest.

    Manifest keys: ``source`` (``{"bucket", "key"}``), ``zone``,
    ``timestamp``, ``sensor`` and ``calibration`` (``gain`` and ``offset``
    lists, ``sun_zenith_deg``, ``earth_sun_dist_au``).
    """
    src = manifest["source"]
    buf = store.get(ObjectKey(src["bucket"], src["key"]))
    return decode_scene(buf, scene_meta_from_manifest(manifest), manifest.get("zone"))
