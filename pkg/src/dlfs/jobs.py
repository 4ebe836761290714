"""Task handlers: what a queue worker does for each task kind.

Tiles are always read through the virtual file layer, so workers share
the block cache and never need to know where objects live.
"""

from __future__ import annotations

import json
from collections.abc import Callable, Iterable
from dataclasses import dataclass, field

from . import bench
from .analytics import CompositeParams, FieldSegmentation, SegmentParams, composite_reduce, segment_fields, to_geojson
from .errors import NotFound
from .ingest import DEFAULT_BUCKET, load_scene, process_scene
from .metastore import FILE, FileMeta, MetaService, join
from .objstore import ObjectKey, ObjectStore
from .raster import RasterTile, decode_tile, encode_tile
from .taskqueue import Task
from .tiling import TileSpec
from .vfl import Vfl, VflConfig

PRODUCTS_BUCKET = "products"


@dataclass
class JobContext:
    store: ObjectStore
    meta: MetaService
    spec: TileSpec = field(default_factory=TileSpec)
    vfl_config: VflConfig = field(default_factory=VflConfig)
    segment: SegmentParams = field(default_factory=SegmentParams)
    composite: CompositeParams = field(default_factory=CompositeParams)
    bucket: str = DEFAULT_BUCKET
    seed: int = 0
    vfl: Vfl | None = None

    def __post_init__(self) -> None:
        if self.vfl is None:
            self.vfl = Vfl(self.store, self.meta, self.vfl_config)


def expand_tiles(meta: MetaService, paths: Iterable[str]) -> list[str]:
    """Files as given; directories expand to the ``.dlt`` files below them, sorted."""
    out: list[str] = []
    for p in paths:
        rec = meta.get_meta(p)
        if not rec.is_dir:
            out.append(p)
            continue
        found, stack = [], [p]
        while stack:
            d = stack.pop()
            for name, kind in meta.list_dir(d):
                child = join(d, name)
                if kind == FILE:
                    if name.endswith(".dlt"):
                        found.append(child)
                else:
                    stack.append(child)
        out.extend(sorted(found))
    return out


def read_tile(vfl: Vfl, path: str) -> RasterTile:
    with vfl.open_file(path) as f:
        return decode_tile(f.read())


def write_product(ctx: JobContext, path: str, data: bytes, mtime: float = 0.0) -> FileMeta:
    """Store ``data`` in the products bucket and publish it at ``path``."""
    okey = ObjectKey(PRODUCTS_BUCKET, path.lstrip("/"))
    om = ctx.store.put(okey, data)
    rec = FileMeta(path, FILE, om.size, mtime, okey)
    ctx.meta.set_meta(rec)
    return rec


def resolve_manifest(store: ObjectStore, manifest) -> dict:
    """A manifest is given inline, or as ``{"bucket", "key"}`` of a JSON object."""
    if isinstance(manifest, dict) and "source" not in manifest and {"bucket", "key"} <= manifest.keys():
        return json.loads(store.get(ObjectKey(manifest["bucket"], manifest["key"])))
    if not isinstance(manifest, dict):
        raise ValueError("manifest must be a JSON object")
    return manifest


def run_ingest(ctx: JobContext, manifest) -> dict:
    m = resolve_manifest(ctx.store, manifest)
    scene = load_scene(ctx.store, m)
    return process_scene(scene, ctx.spec, ctx.store, ctx.meta, bucket=m.get("bucket", ctx.bucket)).to_json()


def run_segment(ctx: JobContext, tiles: list[str], out: str | None = None) -> tuple[FieldSegmentation, dict]:
    paths = expand_tiles(ctx.meta, tiles)
    if not paths:
        raise NotFound("no tiles to segment")
    seg = segment_fields([read_tile(ctx.vfl, p) for p in paths], ctx.segment)
    result = {"tiles": len(paths), "fields": seg.n_fields, "threshold": seg.threshold,
              "polygons": len(seg.polygons)}
    if out:
        doc = to_geojson(seg.polygons, seg.key)
        write_product(ctx, out, json.dumps(doc, separators=(",", ":")).encode())
        result["out"] = out
    return seg, result


def run_composite(ctx: JobContext, tiles: list[str], out: str | None = None) -> tuple[RasterTile, dict]:
    paths = expand_tiles(ctx.meta, tiles)
    if not paths:
        raise NotFound("no tiles to composite")
    comp = composite_reduce([read_tile(ctx.vfl, p) for p in paths], params=ctx.composite)
    result = {"tiles": len(paths), "valid_pixels": int(comp.valid.sum()),
              "zone": comp.key.zone, "i": comp.key.i, "j": comp.key.j}
    if out:
        write_product(ctx, out, encode_tile(comp), float(comp.timestamp))
        result["out"] = out
    return comp, result


def run_bench(ctx: JobContext, payload: dict) -> dict:
    exp = payload.get("experiment", "sweep")
    if exp == "scale":
        rep = bench.aggregate_scaling(payload.get("clients", [1, 4, 16, 64]),
                                      float(payload.get("per_client_bw", 1e9)),
                                      float(payload.get("backbone_bw", 32e9)))
    elif exp == "sweep":
        sizes = payload.get("sizes", list(bench.SWEEP_SIZES))
        reads = int(payload.get("reads", 8))
        store, meta, paths = bench.make_population(reads, max(sizes) + 1, seed=ctx.seed)
        rep = bench.blocksize_sweep(store, meta, paths, sizes, reads, seed=ctx.seed)
    else:
        raise ValueError(f"unknown bench experiment {exp!r}")
    return rep.to_json()


def make_handler(ctx: JobContext) -> Callable[[Task], object]:
    def handle(task: Task) -> object:
        p = task.payload
        if task.kind == "ingest":
            return run_ingest(ctx, p["manifest"])
        if task.kind == "segment":
            return run_segment(ctx, p["tiles"], p.get("out"))[1]
        if task.kind == "composite":
            return run_composite(ctx, p["tiles"], p.get("out"))[1]
        if task.kind == "bench":
            return run_bench(ctx, p)
        raise ValueError(f"no handler for {task.kind!r}")
    return handle
