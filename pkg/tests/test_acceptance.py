"""Acceptance checks: one PASS/FAIL line per criterion, printed even under capture."""
from __future__ import annotations

import threading
import time
import zlib
from collections import Counter

import numpy as np
import pytest

from dlfs.analytics import accumulate, composite_reduce, rasterize, segment_fields
from dlfs.bench import (
    REFERENCE_LINK,
    SWEEP_SIZES,
    aggregate_scaling,
    blocksize_sweep,
    make_population,
    model_throughput,
    per_client_rate,
)
from dlfs.errors import CodecError
from dlfs.metastore import MetaStore
from dlfs.objstore import MemoryStore, RecordingStore
from dlfs.raster import RasterTile, decode_tile, encode_tile
from dlfs.taskqueue import DONE, FAILED, TaskQueue, TransientError, run_workers
from dlfs.tiling import TileKey, TileSpec, span_count, webmercator_tile_count
from dlfs.vfl import Vfl, VflConfig

from conftest import MiB, publish
from oracles import field_stack, segmentation_agreement, weighted_mean_loops


@pytest.fixture
def report(capsys):
    """Print one verdict line per criterion, then fail the test if any check failed."""
    def emit(name: str, ok: bool, detail: str) -> None:
        with capsys.disabled():
            print(f"\nACCEPTANCE {'PASS' if ok else 'FAIL'} {name}: {detail}")
        assert ok, detail
    return emit


def test_vfs_byte_exactness(report):
    t0 = time.perf_counter()
    rng = np.random.default_rng(2024)
    store, meta = MemoryStore(), MetaStore()
    sizes = [1, 4095, 65536, 65537, 1_000_003, 3 * MiB + 17, 8 * MiB]
    data = {}
    for k, n in enumerate(sizes):
        data[f"/o{k}"] = rng.integers(0, 256, n, dtype=np.uint8).tobytes()
        publish(store, meta, f"/o{k}", data[f"/o{k}"])
    # small blocks and a small cache so eviction and readahead are both exercised
    vfl = Vfl(store, meta, VflConfig(64 * 1024, 2, 1 * MiB))
    handles = {p: vfl.open(p) for p in data}
    paths = sorted(data)
    bad = 0
    for _ in range(10_000):
        p = paths[int(rng.integers(len(paths)))]
        n = len(data[p])
        off = int(rng.integers(0, n))
        length = int(rng.choice([1, 8, 4096, 65536, 200_000, 1_500_000])) if rng.random() < 0.5 \
            else int(rng.integers(0, 300_000))
        got = vfl.read_at(handles[p], off, length)
        bad += got != data[p][off:off + length]
    dt = time.perf_counter() - t0
    report("vfs-byte-exactness", bad == 0 and dt < 60.0, f"10000 reads, {bad} mismatches, {dt:.1f} s (< 60 s)")


def test_request_accounting(report):
    store, meta = RecordingStore(MemoryStore()), MetaStore()
    data = np.random.default_rng(0).integers(0, 256, 64 * MiB, dtype=np.uint8).tobytes()
    publish(store, meta, "/big", data)
    store.log.clear()
    vfl = Vfl(store, meta, VflConfig(4 * MiB, 0, 256 * MiB))
    h = vfl.open("/big")
    first = b"".join(vfl.read_at(h, off, MiB) for off in range(0, 64 * MiB, MiB))
    n1 = len(store.ranges())
    again = b"".join(vfl.read_at(h, off, MiB) for off in range(0, 64 * MiB, MiB))
    n2 = len(store.ranges()) - n1
    cold = Vfl(store, meta, VflConfig(4 * MiB, 0, 256 * MiB))
    before = len(store.ranges())
    piece = cold.read_at(cold.open("/big"), 4 * MiB - 4, 8)
    n3 = len(store.ranges()) - before
    ok = (n1, n2, n3) == (16, 0, 2) and first == again == data and piece == data[4 * MiB - 4:4 * MiB + 4]
    report("request-accounting", ok, f"sequential {n1} (16), repeat {n2} (0), straddle {n3} (2)")


def test_tiling_arithmetic(report):
    a = span_count(668_000, TileSpec(4096, 0, 10.0))
    b = span_count(10_000_000, TileSpec(4096, 0, 250.0))
    c = span_count(10_000_000, TileSpec(4096, 0, 10.0))
    wm = all(webmercator_tile_count(L) == 4**L for L in range(11))
    ok = a == 17 and b == 10 and abs(c - 244) <= 1 and wm
    report("tiling-arithmetic", ok, f"668 km @10 m -> {a} (17), 10000 km @250 m -> {b} (10), "
           f"10000 km @10 m -> {c} (244 +-1), 4^L for L<=10: {wm}")


def test_bench_model_calibration(report):
    t0 = time.perf_counter()
    got = model_throughput(4 * MiB, REFERENCE_LINK)
    model_ok = abs(got / 1.064e9 - 1) <= 1e-3
    rep = blocksize_sweep(*make_population(32, 64 * MiB + 1, seed=1), reads_per_size=16, seed=7)
    rates = [r.bytes / r.seconds for r in rep.rows]
    monotone = [r.parameter for r in rep.rows] == list(SWEEP_SIZES) and all(b > a for a, b in zip(rates, rates[1:]))
    worst = max(abs(rate / model_throughput(r.parameter, REFERENCE_LINK) - 1) for r, rate in zip(rep.rows, rates))
    dt = time.perf_counter() - t0
    ok = model_ok and monotone and worst <= 0.05 and dt < 30.0
    report("bench-model-calibration", ok, f"model(4 MiB) = {got / 1e9:.4f} GB/s (1.064 +-0.1%), "
           f"{len(rates)} sizes monotone {monotone}, worst deviation {worst:.2%} (<= 5%), {dt:.1f} s (< 30 s)")


def test_aggregate_scaling_shape(report):
    ns = [1, 2, 4, 8, 16, 32, 64, 128, 256]
    rep = aggregate_scaling(ns, 1e9, 32e9)
    per = {r.parameter: per_client_rate(r) for r in rep.rows}
    agg = [r.bytes / r.seconds for r in rep.rows]
    ok = (abs(per[16] / 1e9 - 1) < 1e-9 and abs(per[64] / 0.5e9 - 1) < 1e-9
          and max(agg) <= 32e9 * (1 + 1e-12))
    report("aggregate-scaling-shape", ok, f"per-client {per[16] / 1e9:.3f} GB/s at 16, {per[64] / 1e9:.3f} GB/s "
           f"at 64, peak aggregate {max(agg) / 1e9:.2f} GB/s (<= 32)")


def test_segmentation_oracle(report):
    t0 = time.perf_counter()
    key, spec = TileKey(36, 5, 9), TileSpec(64, 0, 10.0)
    stack, truth, cloudy = field_stack(11, n_images=12, cloud_fraction=0.2)
    tiles = [RasterTile(key, spec, img, np.ones((64, 64), bool)) for img in stack]
    seg = segment_fields(tiles)
    agree = segmentation_agreement(seg.labels, truth)
    exact = bool(np.array_equal(rasterize(seg.polygons, key, spec, seg.labels.shape), seg.labels))
    again = segment_fields([RasterTile(key, spec, img, np.ones((64, 64), bool))
                            for img in field_stack(11, n_images=12, cloud_fraction=0.2)[0]])
    same = bool(np.array_equal(seg.labels, again.labels)) and seg.polygons == again.polygons
    dt = time.perf_counter() - t0
    ok = seg.n_fields == 3 and agree >= 0.99 and exact and same and dt < 10.0
    report("segmentation-oracle", ok, f"{seg.n_fields} components (3), agreement {agree:.4f} (>= 0.99), "
           f"{len(cloudy)}/12 images clouded, roundtrip exact {exact}, deterministic {same}, {dt:.2f} s (< 10 s)")


def test_composite_properties(report):
    key, spec = TileKey(10, 0, 0), TileSpec(8, 0, 30.0)

    def tile(px, valid=None):
        return RasterTile(key, spec, px, np.ones(px.shape[1:], bool) if valid is None else valid)

    rng = np.random.default_rng(99)
    clear = (rng.random((4, 8, 8)) * 0.25).astype(np.float32)
    single = bool(np.array_equal(composite_reduce([tile(clear)]).pixels, clear))

    convex_bad = perm_worst = 0.0
    for _ in range(1000):
        n = int(rng.integers(1, 8))
        px = [rng.normal(0, 10, (2, 4, 5)) * 10 ** rng.uniform(-3, 3) for _ in range(n)]
        tiles = [tile(p, rng.random((4, 5)) < 0.8) for p in px]
        ws = []
        for _ in range(n):
            w = rng.random((4, 5)) * 10 ** rng.uniform(-3, 3)
            w[rng.random((4, 5)) < 0.2] = 0.0
            ws.append(w)
        vals, ok = accumulate(tiles, ws).mean()
        eff = [np.where(t.valid, w, 0.0) for t, w in zip(tiles, ws)]
        used = np.stack([w > 0 for w in eff])
        stack = np.stack(px)
        lo = np.where(used[:, None], stack, np.inf).min(0)[:, ok]
        hi = np.where(used[:, None], stack, -np.inf).max(0)[:, ok]
        convex_bad += int(np.sum(vals[:, ok] < lo) + np.sum(vals[:, ok] > hi))
        oracle = weighted_mean_loops(px, eff)
        convex_bad += int(not np.array_equal(ok, ~np.isnan(oracle[0])))
        perm = rng.permutation(n)
        back, _ = accumulate([tiles[k] for k in perm], [ws[k] for k in perm]).mean()
        if ok.any():
            scale = np.maximum(1.0, np.abs(vals[:, ok]))
            perm_worst = max(perm_worst, float(np.max(np.abs(back[:, ok] - vals[:, ok]) / scale)))

    a = rng.random((4, 16, 16)) * 0.2
    a[:3, 4:10, 4:10] = 0.95
    b = rng.random((4, 16, 16)) * 0.2
    vals, _ = accumulate([tile(a), tile(b)]).mean()
    cloud_err = float(np.max(np.abs(vals[:, 4:10, 4:10] - b[:, 4:10, 4:10])))
    ok = single and convex_bad == 0 and cloud_err <= 1e-12 and perm_worst < 1e-10
    report("composite-properties", ok, f"single input exact {single}, convexity violations {int(convex_bad)} "
           f"over 1000 stacks, cloud exclusion error {cloud_err:.1e} (<= 1e-12), "
           f"permutation change {perm_worst:.1e} (< 1e-10)")


class _Tally(TaskQueue):
    def __init__(self, *a, **kw):
        super().__init__(*a, **kw)
        self.terminal = Counter()
        self._lock = threading.Lock()

    def settle(self, tid, outcome, **kw):
        state = super().settle(tid, outcome, **kw)
        if state in (DONE, FAILED):
            with self._lock:
                self.terminal[tid] += 1
        return state


def test_task_queue(report):
    t0 = time.perf_counter()
    q = _Tally(MetaStore(), "accept")
    ids = [q.enqueue("bench", {"k": k}, task_id=f"t{k:04d}") for k in range(1000)]

    def handler(task):
        if zlib.crc32(f"{task.id}:{task.attempts}".encode()) % 100 < 5:
            raise TransientError("injected")
        return {"ok": True}

    reps = run_workers(q, handler, 16)
    s = q.stats()
    dt = time.perf_counter() - t0
    once = set(q.terminal) == set(ids) and set(q.terminal.values()) == {1}
    retried = sum(r.retried for r in reps)
    ok = once and s["done"] + s["failed"] == 1000 and s["pending"] == s["running"] == 0 and dt < 30.0
    report("task-queue", ok, f"done {s['done']} + failed {s['failed']} = {s['done'] + s['failed']} (1000), "
           f"{retried} retries, terminal exactly once {once}, {dt:.1f} s (< 30 s)")


def test_codec(report):
    rng = np.random.default_rng(5)
    bad_roundtrips = undetected = 0
    dtypes = (np.uint8, np.uint16, np.float32)
    for k in range(1000):
        dtype = dtypes[k % 3]
        bands, h, w = int(rng.integers(1, 5)), int(rng.integers(1, 40)), int(rng.integers(1, 40))
        if dtype == np.float32:
            px = rng.standard_normal((bands, h, w)).astype(np.float32)
            px.ravel()[::7] = np.nan
        else:
            px = rng.integers(0, np.iinfo(dtype).max, (bands, h, w), endpoint=True).astype(dtype)
        valid = np.ones((h, w), bool) if k % 4 == 0 else rng.random((h, w)) < 0.7
        t = RasterTile(TileKey(int(rng.integers(1, 61)), int(rng.integers(-99, 99)), int(rng.integers(-99, 99))),
                       TileSpec(64, 2, 10.0), px, valid, int(rng.integers(0, 2**40)), int(rng.integers(0, 9)))
        buf = encode_tile(t)
        back = decode_tile(buf)
        bad_roundtrips += not (back.equals(t) and back.pixels.dtype == np.dtype(dtype) and encode_tile(back) == buf)
        corrupt = bytearray(buf)
        # flip bits inside the payload, past the header
        pos = int(rng.integers(68, len(buf) - 8))
        corrupt[pos] ^= int(rng.integers(1, 256))
        try:
            decode_tile(bytes(corrupt))
            undetected += 1
        except CodecError:
            pass
    ok = bad_roundtrips == 0 and undetected == 0
    report("codec", ok, f"1000 roundtrips over u1/u2/f4, {bad_roundtrips} mismatches, "
           f"{undetected} of 1000 corrupted payloads undetected")
