"""``dlfs``: one command for every part of the system.

Machine-readable results go to stdout as JSON (or CSV for benchmarks, raw
bytes for ``store get`` and ``fs cat``); diagnostics go to stderr. Exit
status is 0 on success, 1 on an operational error and 2 on a usage or
configuration error.
"""

from __future__ import annotations

import argparse
import json
import logging
import signal
import sys
import threading
from collections.abc import Sequence
from contextlib import contextmanager
from dataclasses import asdict
from pathlib import Path

from . import bench
from .analytics import colorize, preview_rgb, save_png, to_geojson
from .config import Config, ConfigError, load_config
from .errors import DlfsError
from .jobs import JobContext, make_handler, resolve_manifest, run_composite, run_ingest, run_segment
from .metastore import MetaClient, MetaServer, MetaService, MetaStore
from .objstore import NetworkModel, ObjectKey, ObjectStore, open_store
from .raster import encode_tile
from .taskqueue import TaskQueue, run_workers
from .tiling import (
    TileKey,
    TileSpec,
    span_count,
    tile_bounds,
    tile_for_lonlat,
    tile_index,
    webmercator_tile_count,
)
from .vfl import Vfl

log = logging.getLogger("dlfs")

_SUFFIX = {"k": 1 << 10, "m": 1 << 20, "g": 1 << 30}


def parse_size(s: str) -> int:
    """``4194304``, ``4M``, ``4MiB``, ``32k``: binary multiples."""
    t = s.strip().lower().removesuffix("ib").removesuffix("b")
    mult = _SUFFIX.get(t[-1:], 1)
    if mult > 1:
        t = t[:-1]
    try:
        v = int(t) * mult
    except ValueError:
        raise argparse.ArgumentTypeError(f"not a size: {s!r}") from None
    if v <= 0:
        raise argparse.ArgumentTypeError(f"size must be positive: {s!r}")
    return v


def _size_list(s: str) -> list[int]:
    return [parse_size(x) for x in s.split(",") if x.strip()]


def _int_list(s: str) -> list[int]:
    try:
        return [int(x) for x in s.split(",") if x.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"not a list of integers: {s!r}") from None


def _object_key(s: str) -> ObjectKey:
    bucket, sep, key = s.partition("/")
    if not sep:
        raise argparse.ArgumentTypeError(f"expected BUCKET/KEY, got {s!r}")
    try:
        return ObjectKey(bucket, key)
    except ValueError as e:
        raise argparse.ArgumentTypeError(str(e)) from None


def _emit(obj) -> None:
    sys.stdout.write(json.dumps(obj, indent=2, sort_keys=True) + "\n")


def _read_json_arg(s: str):
    """Inline JSON, ``@file.json`` or ``@-`` for stdin."""
    if s.startswith("@"):
        src = s[1:]
        text = sys.stdin.read() if src == "-" else Path(src).read_text(encoding="utf-8")
    else:
        text = s
    return json.loads(text)


# services

@contextmanager
def open_meta(endpoint: str, *, save: bool):
    """``file:PATH`` (loaded, saved back if ``save``), ``memory:`` or ``HOST:PORT``."""
    if endpoint.startswith("file:"):
        path = endpoint[5:]
        ms = MetaStore.load(path)
        yield ms
        if save:
            Path(path).parent.mkdir(parents=True, exist_ok=True)
            ms.save(path)
    elif endpoint in ("memory", "memory:", "memory://"):
        yield MetaStore()
    else:
        with MetaClient(endpoint) as mc:
            yield mc


def _store(cfg: Config) -> ObjectStore:
    try:
        return open_store(cfg.store)
    except ValueError as e:
        raise ConfigError(str(e)) from None


def _ctx(cfg: Config, store: ObjectStore, meta: MetaService) -> JobContext:
    return JobContext(store, meta, cfg.tile, cfg.vfl, cfg.segment, cfg.composite, cfg.bucket, cfg.seed)


# commands

def cmd_config(cfg: Config, a) -> int:
    _emit({"config": cfg.to_json(), "sources": cfg.sources})
    return 0


def cmd_store_put(cfg: Config, a) -> int:
    data = sys.stdin.buffer.read() if a.file == "-" else Path(a.file).read_bytes()
    om = _store(cfg).put(a.key, data)
    _emit({"bucket": a.key.bucket, "key": a.key.key, "size": om.size, "etag": om.etag})
    return 0


def cmd_store_get(cfg: Config, a) -> int:
    data = _store(cfg).get(a.key)
    if a.output and a.output != "-":
        Path(a.output).write_bytes(data)
    else:
        sys.stdout.buffer.write(data)
        sys.stdout.flush()
    return 0


def cmd_store_ls(cfg: Config, a) -> int:
    st = _store(cfg)
    keys = st.list(a.bucket, a.prefix, start_after=a.start_after, limit=a.limit)
    out = []
    for k in keys:
        m = st.head(k)
        out.append({"key": k.key, "size": m.size, "etag": m.etag})
    _emit(out)
    return 0


def cmd_meta_serve(cfg: Config, a) -> int:
    data = a.data or (cfg.metastore[5:] if cfg.metastore.startswith("file:") else None)
    ms = MetaStore.load(data) if data else MetaStore()
    server = MetaServer(ms, a.host, a.port)
    server.start()
    stop = threading.Event()
    for sig in (signal.SIGINT, signal.SIGTERM):
        signal.signal(sig, lambda *_: stop.set())
    _emit({"address": server.address, "data": data})
    sys.stdout.flush()
    log.info("metadata service on %s", server.address)
    stop.wait()
    server.shutdown()
    server.server_close()
    if data:
        Path(data).parent.mkdir(parents=True, exist_ok=True)
        ms.save(data)
    return 0


def cmd_meta_import(cfg: Config, a) -> int:
    with open_meta(cfg.metastore, save=True) as meta:
        n = meta.import_objects(_store(cfg), a.bucket, a.prefix, a.root)
    _emit({"imported": n, "bucket": a.bucket, "root": a.root})
    return 0


def cmd_fs_stat(cfg: Config, a) -> int:
    with open_meta(cfg.metastore, save=False) as meta:
        _emit(meta.get_meta(a.path).to_json())
    return 0


def cmd_fs_ls(cfg: Config, a) -> int:
    with open_meta(cfg.metastore, save=False) as meta:
        _emit([{"name": n, "kind": k} for n, k in meta.list_dir(a.path)])
    return 0


def cmd_fs_cat(cfg: Config, a) -> int:
    with open_meta(cfg.metastore, save=False) as meta:
        vfl = Vfl(_store(cfg), meta, cfg.vfl)
        out = sys.stdout.buffer
        with vfl.open_file(a.path) as f:
            while chunk := f.read(cfg.vfl.block_size):
                out.write(chunk)
        out.flush()
    return 0


def cmd_fs_stats(cfg: Config, a) -> int:
    with open_meta(cfg.metastore, save=False) as meta:
        vfl = Vfl(_store(cfg), meta, cfg.vfl)
        total = 0
        for _ in range(a.repeat):
            for p in a.paths:
                with vfl.open_file(p) as f:
                    total += len(f.read())
        stats = asdict(vfl.cache_stats())
    stats.update(bytes_read=total, cached_bytes=vfl.cached_bytes, block_size=cfg.vfl.block_size,
                 readahead_blocks=cfg.vfl.readahead_blocks)
    _emit(stats)
    return 0


def _spec(cfg: Config, a) -> TileSpec:
    return TileSpec(
        a.tilepx if getattr(a, "tilepx", None) else cfg.tile.tile_px,
        cfg.tile.border_px,
        a.res if getattr(a, "res", None) else cfg.tile.resolution_m,
    )


def cmd_tile_index(cfg: Config, a) -> int:
    spec = _spec(cfg, a)
    if a.lon is not None:
        key = tile_for_lonlat(a.lon, a.lat, spec)
    else:
        i, j = tile_index(a.easting, a.northing, spec)
        key = TileKey(a.zone, i, j)
    _emit({"zone": key.zone, "i": key.i, "j": key.j})
    return 0


def cmd_tile_bounds(cfg: Config, a) -> int:
    r = tile_bounds(TileKey(a.zone, a.i, a.j), _spec(cfg, a), with_border=a.border)
    _emit({"e_min": r.e_min, "n_min": r.n_min, "e_max": r.e_max, "n_max": r.n_max})
    return 0


def cmd_tile_span(cfg: Config, a) -> int:
    if a.webmercator is not None:
        print(webmercator_tile_count(a.webmercator))
    else:
        print(span_count(a.distance, _spec(cfg, a)))
    return 0


def cmd_ingest_run(cfg: Config, a) -> int:
    with open_meta(cfg.metastore, save=True) as meta:
        store = _store(cfg)
        if a.manifest.startswith("@") or Path(a.manifest).is_file():
            src = a.manifest if a.manifest.startswith("@") else "@" + a.manifest
            manifest = _read_json_arg(src)
        else:
            k = _object_key(a.manifest)
            manifest = resolve_manifest(store, {"bucket": k.bucket, "key": k.key})
        report = run_ingest(_ctx(cfg, store, meta), manifest)
    _emit(report)
    return 1 if any(t["error"] for t in report["tiles"]) else 0


def cmd_segment_run(cfg: Config, a) -> int:
    with open_meta(cfg.metastore, save=False) as meta:
        seg, res = run_segment(_ctx(cfg, _store(cfg), meta), a.tile)
    if a.png:
        save_png(colorize(seg.labels, cfg.seed), a.png)
        res["png"] = a.png
    doc = to_geojson(seg.polygons, seg.key)
    if a.out == "-":
        _emit(doc)
    else:
        Path(a.out).write_text(json.dumps(doc), encoding="utf-8")
        res["out"] = a.out
        _emit(res)
    return 0


def cmd_composite_run(cfg: Config, a) -> int:
    with open_meta(cfg.metastore, save=False) as meta:
        comp, res = run_composite(_ctx(cfg, _store(cfg), meta), a.tiles)
    Path(a.out).write_bytes(encode_tile(comp))
    res["out"] = a.out
    if a.preview:
        save_png(preview_rgb(comp), a.preview)
        res["preview"] = a.preview
    _emit(res)
    return 0


def _queue(cfg: Config, meta: MetaService) -> TaskQueue:
    return TaskQueue(meta, cfg.queue, lease_s=cfg.lease_s)


def cmd_queue_enqueue(cfg: Config, a) -> int:
    payload = _read_json_arg(a.payload)
    with open_meta(cfg.metastore, save=True) as meta:
        tid = _queue(cfg, meta).enqueue(a.kind, payload, task_id=a.id, max_attempts=a.max_attempts)
    _emit({"id": tid, "kind": a.kind})
    return 0


def cmd_queue_worker(cfg: Config, a) -> int:
    with open_meta(cfg.metastore, save=True) as meta:
        q = _queue(cfg, meta)
        handler = make_handler(_ctx(cfg, _store(cfg), meta))
        reports = run_workers(q, handler, a.concurrency, max_tasks=a.max_tasks,
                              stop_when_idle=not a.forever)
        stats = q.stats()
    _emit({"workers": [asdict(r) for r in reports], "stats": stats})
    return 1 if any(r.failed for r in reports) else 0


def cmd_queue_stats(cfg: Config, a) -> int:
    with open_meta(cfg.metastore, save=False) as meta:
        q = _queue(cfg, meta)
        out = q.stats()
        if a.tasks:
            out["tasks"] = [asdict(t) for t in sorted(q.tasks(), key=lambda t: t.id)]
    _emit(out)
    return 0


def _write_report(rep: bench.BenchReport, path: str | None) -> None:
    text = rep.to_csv()
    if path and path != "-":
        Path(path).write_text(text, encoding="utf-8")
    sys.stdout.write(text)


def cmd_bench_sweep(cfg: Config, a) -> int:
    model = NetworkModel(a.latency, a.bandwidth, a.overhead)
    sizes = a.sizes or list(bench.SWEEP_SIZES)
    store, meta, paths = bench.make_population(max(a.files, a.reads), max(sizes) + 1, seed=cfg.seed)
    rep = bench.blocksize_sweep(store, meta, paths, sizes, a.reads, model=model, seed=cfg.seed, mode=a.mode)
    _write_report(rep, a.report)
    return 0


def cmd_bench_scale(cfg: Config, a) -> int:
    rep = bench.aggregate_scaling(a.clients, a.per_client_bw, a.backbone_bw, a.bytes_per_client)
    _write_report(rep, a.report)
    return 0


# parser

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="dlfs", description=__doc__.splitlines()[0],
                                formatter_class=argparse.ArgumentDefaultsHelpFormatter)
    g = p.add_argument_group("configuration (flags > environment > config file > defaults)")
    g.add_argument("--config", help="INI config file (default: $DLFS_CONFIG)")
    g.add_argument("--store", help="object store URI: memory://, dir:PATH, sim+dir:PATH?latency=S ($DLFS_STORE)")
    g.add_argument("--metastore", help="file:PATH, memory: or HOST:PORT ($DLFS_METASTORE)")
    g.add_argument("--block-size", type=parse_size, help="VFS block size ($DLFS_BLOCK_SIZE)")
    g.add_argument("--readahead", type=int, help="read-ahead blocks ($DLFS_READAHEAD)")
    g.add_argument("--cache-bytes", type=parse_size, help="block cache capacity ($DLFS_CACHE_BYTES)")
    g.add_argument("--tile-px", type=int, help="tile width in pixels")
    g.add_argument("--border-px", type=int, help="tile border in pixels")
    g.add_argument("--resolution", type=float, help="ground resolution in metres")
    g.add_argument("--cloud-threshold", type=float, help="visible reflectance above which a pixel is cloud")
    g.add_argument("--edge-threshold", type=float, help="fixed gradient threshold (default: Otsu)")
    g.add_argument("--eps", type=float, help="composite weight floor")
    g.add_argument("--seed", type=int, help="random seed")
    g.add_argument("--bucket", help="bucket for ingested tiles")
    g.add_argument("--queue", help="task queue name")
    g.add_argument("--lease", type=float, help="task lease in seconds")
    p.add_argument("-v", "--verbose", action="count", default=0)
    sub = p.add_subparsers(dest="group", required=True, metavar="COMMAND")

    def group(name: str, help: str):
        sp = sub.add_parser(name, help=help)
        return sp.add_subparsers(dest="cmd", required=True, metavar="SUBCOMMAND")

    def leaf(parent, name: str, fn, help: str):
        sp = parent.add_parser(name, help=help, formatter_class=argparse.ArgumentDefaultsHelpFormatter)
        sp.set_defaults(fn=fn)
        return sp

    sp = sub.add_parser("config", help="print the resolved configuration")
    sp.set_defaults(fn=cmd_config)

    s = group("store", "object store access")
    x = leaf(s, "put", cmd_store_put, "upload a file as one object")
    x.add_argument("key", type=_object_key, metavar="BUCKET/KEY")
    x.add_argument("file", help="local file, or - for stdin")
    x = leaf(s, "get", cmd_store_get, "download an object")
    x.add_argument("key", type=_object_key, metavar="BUCKET/KEY")
    x.add_argument("-o", "--output", help="write here instead of stdout")
    x = leaf(s, "ls", cmd_store_ls, "list objects")
    x.add_argument("bucket")
    x.add_argument("--prefix", default="")
    x.add_argument("--start-after")
    x.add_argument("--limit", type=int)

    s = group("meta", "metadata service")
    x = leaf(s, "serve", cmd_meta_serve, "run the metadata service until interrupted")
    x.add_argument("--host", default="127.0.0.1")
    x.add_argument("--port", type=int, default=0, help="0 picks a free port")
    x.add_argument("--data", help="JSON snapshot to load and save on exit (default: the file: metastore)")
    x = leaf(s, "import", cmd_meta_import, "publish existing objects as files")
    x.add_argument("bucket")
    x.add_argument("--prefix", default="")
    x.add_argument("--root", default="/")

    s = group("fs", "read through the virtual file layer")
    x = leaf(s, "stat", cmd_fs_stat, "file or directory metadata")
    x.add_argument("path")
    x = leaf(s, "ls", cmd_fs_ls, "list a directory")
    x.add_argument("path", nargs="?", default="/")
    x = leaf(s, "cat", cmd_fs_cat, "write a file to stdout")
    x.add_argument("path")
    x = leaf(s, "stats", cmd_fs_stats, "read files and report block cache counters")
    x.add_argument("paths", nargs="+")
    x.add_argument("--repeat", type=int, default=1)

    s = group("tile", "tile grid arithmetic")
    x = leaf(s, "index", cmd_tile_index, "tile containing a point")
    x.add_argument("--lon", type=float)
    x.add_argument("--lat", type=float)
    x.add_argument("--zone", type=int)
    x.add_argument("--easting", type=float)
    x.add_argument("--northing", type=float)
    x.add_argument("--tilepx", type=int)
    x.add_argument("--res", type=float)
    x = leaf(s, "bounds", cmd_tile_bounds, "UTM bounds of a tile")
    x.add_argument("--zone", type=int, required=True)
    x.add_argument("--i", type=int, required=True)
    x.add_argument("--j", type=int, required=True)
    x.add_argument("--border", action="store_true", help="include the border")
    x.add_argument("--tilepx", type=int)
    x.add_argument("--res", type=float)
    x = leaf(s, "span", cmd_tile_span, "tiles needed to cover a distance")
    x.add_argument("--distance", type=float, help="metres")
    x.add_argument("--tilepx", type=int)
    x.add_argument("--res", type=float)
    x.add_argument("--webmercator", type=int, metavar="LEVEL", help="print the tile count 4^LEVEL instead")

    s = group("ingest", "scene ingest")
    x = leaf(s, "run", cmd_ingest_run, "ingest one scene")
    x.add_argument("--manifest", required=True, help="local JSON file, @file, or BUCKET/KEY of a JSON object")

    s = group("segment", "field segmentation")
    x = leaf(s, "run", cmd_segment_run, "segment a stack of co-registered tiles")
    x.add_argument("--tile", nargs="+", required=True, help="tile files or a tile directory")
    x.add_argument("--out", required=True, help="GeoJSON output file, - for stdout")
    x.add_argument("--png", help="also write a colorized label image")

    s = group("composite", "cloud-free compositing")
    x = leaf(s, "run", cmd_composite_run, "weighted composite of a tile stack")
    x.add_argument("--tiles", nargs="+", required=True, help="tile files or a tile directory")
    x.add_argument("--out", required=True, help="output tile file")
    x.add_argument("--preview", help="also write an RGB PNG")

    s = group("queue", "asynchronous task queue")
    x = leaf(s, "enqueue", cmd_queue_enqueue, "add a task")
    x.add_argument("--kind", required=True, choices=["ingest", "segment", "composite", "bench"])
    x.add_argument("--payload", required=True, help="JSON, @file.json or @-")
    x.add_argument("--id", help="task id (default: random)")
    x.add_argument("--max-attempts", type=int, default=3)
    x = leaf(s, "worker", cmd_queue_worker, "run workers until the queue drains")
    x.add_argument("--concurrency", type=int, default=1)
    x.add_argument("--max-tasks", type=int, help="per worker")
    x.add_argument("--forever", action="store_true", help="keep polling when idle")
    x = leaf(s, "stats", cmd_queue_stats, "task counts by state")
    x.add_argument("--tasks", action="store_true", help="include every task record")

    s = group("bench", "I/O benchmarks")
    x = leaf(s, "sweep", cmd_bench_sweep, "random reads at a range of block sizes")
    x.add_argument("--sizes", type=_size_list, help="comma-separated, e.g. 32k,1M,4M (default: 32 KiB .. 32 MiB)")
    x.add_argument("--reads", type=int, default=16, help="reads per size")
    x.add_argument("--files", type=int, default=16, help="population size")
    x.add_argument("--mode", choices=["sim", "wall"], default="sim")
    x.add_argument("--latency", type=float, default=bench.REFERENCE_LINK.latency_s, help="seconds")
    x.add_argument("--bandwidth", type=float, default=bench.REFERENCE_LINK.bandwidth_Bps, help="bytes/s")
    x.add_argument("--overhead", type=float, default=0.0, help="seconds per request")
    x.add_argument("--report", help="also write the CSV here")
    x = leaf(s, "scale", cmd_bench_scale, "clients sharing a backbone")
    x.add_argument("--clients", type=_int_list, default=[1, 4, 16, 64, 128, 512])
    x.add_argument("--per-client-bw", type=float, default=1e9, help="bytes/s")
    x.add_argument("--backbone-bw", type=float, default=32e9, help="bytes/s")
    x.add_argument("--bytes-per-client", type=int, default=10**9)
    x.add_argument("--report", help="also write the CSV here")
    return p


_FLAG_KEYS = {
    "store": ("store", "uri"), "metastore": ("metastore", "endpoint"),
    "block_size": ("vfl", "block_size"), "readahead": ("vfl", "readahead"),
    "cache_bytes": ("vfl", "cache_bytes"), "tile_px": ("tile", "tile_px"),
    "border_px": ("tile", "border_px"), "resolution": ("tile", "resolution_m"),
    "cloud_threshold": ("analytics", "cloud_threshold"), "edge_threshold": ("analytics", "edge_threshold"),
    "eps": ("analytics", "eps"), "seed": ("analytics", "seed"), "bucket": ("ingest", "bucket"),
    "queue": ("queue", "name"), "lease": ("queue", "lease_s"),
}


def _check_args(p: argparse.ArgumentParser, a) -> None:
    fn = a.fn
    if fn is cmd_tile_index:
        if (a.lon is None) != (a.lat is None):
            p.error("--lon and --lat go together")
        if a.lon is None and None in (a.zone, a.easting, a.northing):
            p.error("give --lon/--lat or --zone/--easting/--northing")
    elif fn is cmd_tile_span and (a.distance is None) == (a.webmercator is None):
        p.error("give exactly one of --distance or --webmercator")
    elif fn is cmd_queue_worker and a.concurrency < 1:
        p.error("--concurrency must be >= 1")
    elif fn is cmd_bench_sweep and a.reads < 1:
        p.error("--reads must be >= 1")


def run(argv: Sequence[str] | None = None) -> int:
    p = build_parser()
    try:
        a = p.parse_args(argv)
        _check_args(p, a)
    except SystemExit as e:
        return int(e.code or 0)
    logging.basicConfig(level=logging.WARNING - 10 * min(a.verbose, 2), stream=sys.stderr,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = load_config({_FLAG_KEYS[k]: getattr(a, k) for k in _FLAG_KEYS}, path=a.config)
    except ConfigError as e:
        print(f"dlfs: configuration error: {e}", file=sys.stderr)
        return 2
    try:
        return a.fn(cfg, a)
    except ConfigError as e:
        print(f"dlfs: configuration error: {e}", file=sys.stderr)
        return 2
    except (DlfsError, OSError, ValueError, KeyError, OverflowError) as e:
        print(f"dlfs: {type(e).__name__}: {e}", file=sys.stderr)
        return 1


def main() -> None:
    sys.exit(run())
