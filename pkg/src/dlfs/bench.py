"""I/O benchmark harness.

Three experiments:

- :func:`blocksize_sweep`: random single-block reads through the virtual
  file layer at a range of block sizes, one cold read per file.
- :func:`aggregate_scaling`: many clients sharing a backbone link,
  simulated as max-min fair fluid flows.
- :func:`reuse_advantage`: block caching versus fetching the whole object
  on every read.

Simulated mode charges virtual time through :class:`SimulatedStore` and is
bit-reproducible. Wall-clock mode times the same work with
``time.perf_counter`` and is informative only.
"""

from __future__ import annotations

import csv
import io
import math
import random
import time
from collections.abc import Sequence
from dataclasses import dataclass, field

import numpy as np

from ._fnv import fnv1a64_hex
from .errors import NotFound
from .metastore import FILE, FileMeta, MetaService, MetaStore
from .objstore import (
    MemoryStore,
    NetworkModel,
    ObjectKey,
    ObjectMeta,
    ObjectStore,
    SimClock,
    SimulatedStore,
    _page,
    _window,
)
from .vfl import Vfl, VflConfig

KiB, MiB = 1 << 10, 1 << 20

# eleven block sizes, 32 KiB .. 32 MiB
SWEEP_SIZES = tuple(32 * KiB << k for k in range(11))

# 40 us small-message latency, 8.6 Gbit/s large-message bandwidth
REFERENCE_LINK = NetworkModel(latency_s=40e-6, bandwidth_Bps=8.6e9 / 8, per_request_overhead_s=0.0)


def model_throughput(block_bytes: int, m: NetworkModel) -> float:
    """Bytes per second for back-to-back requests of ``block_bytes``."""
    if block_bytes <= 0:
        raise ValueError("block size must be positive")
    return block_bytes / m.request_time(block_bytes)


@dataclass(frozen=True)
class BenchRow:
    parameter: int
    bytes: int
    seconds: float

    @property
    def MBps(self) -> float:
        return self.bytes / self.seconds / 1e6 if self.seconds > 0 else math.inf


@dataclass
class BenchReport:
    rows: list[BenchRow]
    mode: str
    config: dict = field(default_factory=dict)

    def __post_init__(self) -> None:
        self.rows.sort(key=lambda r: r.parameter)

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["parameter", "bytes", "seconds", "MBps"])
        for r in self.rows:
            w.writerow([r.parameter, r.bytes, repr(r.seconds), repr(r.MBps)])
        return buf.getvalue()

    def to_json(self) -> dict:
        return {
            "mode": self.mode,
            "config": self.config,
            "rows": [{"parameter": r.parameter, "bytes": r.bytes, "seconds": r.seconds, "MBps": r.MBps}
                     for r in self.rows],
        }


class SyntheticStore(ObjectStore):
    """Read-only objects whose content is generated on demand.

    Each object repeats a seeded pseudo-random pattern of a prime length,
    so large populations cost one pattern per object, not their full size.
    """

    PERIOD = 65521

    def __init__(self, objects: dict[ObjectKey, int], seed: int = 0) -> None:
        self._sizes = dict(objects)
        self._seed = seed
        self._patterns: dict[ObjectKey, bytes] = {}

    def _pattern(self, key: ObjectKey) -> bytes:
        p = self._patterns.get(key)
        if p is None:
            rng = np.random.default_rng([self._seed, int(fnv1a64_hex(str(key).encode()), 16) >> 1])
            p = rng.integers(0, 256, self.PERIOD, dtype=np.uint8).tobytes()
            # two periods plus slack make any window a slice of a repeat
            self._patterns[key] = p = p * 3
        return p

    def _size(self, key: ObjectKey) -> int:
        try:
            return self._sizes[key]
        except KeyError:
            raise NotFound(f"no such object: {key}") from None

    def _etag(self, key: ObjectKey) -> str:
        return fnv1a64_hex(f"{self._seed}:{key}:{self._sizes[key]}".encode())

    def put(self, key, data):
        raise PermissionError("synthetic store is read-only")

    def fetch(self, key, offset, length):
        lo, hi = _window(self._size(key), offset, length, key)
        pat, per = self._pattern(key), self.PERIOD
        n = hi - lo
        start = lo % per
        if n <= 2 * per:
            return pat[start:start + n], self._etag(key)
        reps, rem = divmod(n, per)
        unit = pat[start:start + per]
        return unit * reps + unit[:rem], self._etag(key)

    def head(self, key):
        return ObjectMeta(self._size(key), self._etag(key), 0.0)

    def list(self, bucket, prefix="", *, start_after=None, limit=None):
        names = [k.key for k in self._sizes if k.bucket == bucket]
        return [ObjectKey(bucket, k) for k in _page(names, prefix, start_after, limit)]


def make_population(n_files: int, file_bytes: int, *, seed: int = 0, bucket: str = "bench",
                    synthetic: bool = True) -> tuple[ObjectStore, MetaStore, list[str]]:
    """A store plus metadata holding ``n_files`` objects at ``/bench/fNNNN``."""
    keys = {ObjectKey(bucket, f"f{k:04d}"): file_bytes for k in range(n_files)}
    if synthetic:
        store: ObjectStore = SyntheticStore(keys, seed)
    else:
        store = MemoryStore()
        rng = np.random.default_rng(seed)
        for k in keys:
            store.put(k, rng.integers(0, 256, file_bytes, dtype=np.uint8).tobytes())
    meta = MetaStore()
    paths = []
    for k, size in keys.items():
        path = f"/bench/{k.key}"
        meta.set_meta(FileMeta(path, FILE, size, 0.0, k))
        paths.append(path)
    return store, meta, paths


def blocksize_sweep(
    store: ObjectStore,
    meta: MetaService,
    paths: Sequence[str],
    sizes: Sequence[int] = SWEEP_SIZES,
    reads_per_size: int = 16,
    *,
    model: NetworkModel = REFERENCE_LINK,
    seed: int = 0,
    mode: str = "sim",
) -> BenchReport:
    """One cold, block-aligned read of ``size`` bytes per file, per size.

    Each size gets a fresh mount (cold cache, no read-ahead) over a fresh
    virtual clock. Reads go to distinct files chosen at random, at a
    random full-block offset.
    """
    if mode not in ("sim", "wall"):
        raise ValueError("mode must be 'sim' or 'wall'")
    if reads_per_size > len(paths):
        raise ValueError(f"population too small: {len(paths)} files for {reads_per_size} reads per size")
    biggest = max(sizes)
    file_sizes = {p: meta.get_meta(p).size for p in paths}
    if min(file_sizes.values()) <= biggest:
        raise ValueError(f"population too small: every file must be larger than {biggest} bytes")
    rows = []
    for size in sorted(sizes):
        sim = SimulatedStore(store, model, SimClock())
        cfg = VflConfig(block_size=size, readahead_blocks=0, cache_capacity=2 * size)
        vfl = Vfl(sim if mode == "sim" else store, meta, cfg)
        rng = random.Random(f"{seed}:{size}")
        nbytes = 0
        t0 = time.perf_counter()
        for path in rng.sample(list(paths), reads_per_size):
            h = vfl.open(path)
            block = rng.randrange(file_sizes[path] // size)
            nbytes += len(vfl.read_at(h, block * size, size))
            vfl.close(h)
        wall = time.perf_counter() - t0
        rows.append(BenchRow(size, nbytes, sim.clock.seconds if mode == "sim" else wall))
    config = {
        "experiment": "blocksize_sweep", "reads_per_size": reads_per_size, "files": len(paths),
        "seed": seed, "latency_s": model.latency_s, "bandwidth_Bps": model.bandwidth_Bps,
        "per_request_overhead_s": model.per_request_overhead_s,
    }
    return BenchReport(rows, mode, config)


# backbone sharing

def max_min_rates(caps: Sequence[float], capacity: float) -> list[float]:
    """Max-min fair allocation of ``capacity`` among flows capped at ``caps``."""
    rates = [0.0] * len(caps)
    left, k = capacity, len(caps)
    for idx in sorted(range(len(caps)), key=lambda i: caps[i]):
        share = left / k
        rates[idx] = min(caps[idx], share)
        left -= rates[idx]
        k -= 1
    return rates


@dataclass
class Flow:
    nbytes: float
    cap: float
    start: float = 0.0
    finish: float | None = None


def simulate_link(flows: list[Flow], capacity: float) -> list[Flow]:
    """Fluid simulation of flows sharing one link; fills in ``finish`` times."""
    now = 0.0
    remaining = {i: f.nbytes for i, f in enumerate(flows)}
    waiting = sorted(range(len(flows)), key=lambda i: flows[i].start)
    active: list[int] = []
    while remaining:
        while waiting and flows[waiting[0]].start <= now:
            active.append(waiting.pop(0))
        if not active:
            now = flows[waiting[0]].start
            continue
        rates = max_min_rates([flows[i].cap for i in active], capacity)
        dt = min(remaining[i] / r for i, r in zip(active, rates) if r > 0)
        if waiting:
            dt = min(dt, flows[waiting[0]].start - now)
        now += dt
        for i, r in zip(list(active), rates):
            remaining[i] -= r * dt
            # relative tolerance: equal flows finish in the same step
            if remaining[i] <= flows[i].nbytes * 1e-12:
                flows[i].finish = now
                del remaining[i]
                active.remove(i)
    return flows


def aggregate_scaling(
    n_clients_list: Sequence[int],
    per_client_bw: float,
    backbone_bw: float,
    bytes_per_client: int = 10**9,
) -> BenchReport:
    """Aggregate read rate of ``n`` equal clients sharing a backbone.

    Each client moves ``bytes_per_client`` at up to ``per_client_bw``; the
    backbone splits ``backbone_bw`` max-min fairly. One row per ``n``:
    total bytes and the makespan.
    """
    if per_client_bw <= 0 or backbone_bw <= 0:
        raise ValueError("bandwidths must be positive")
    rows = []
    for n in sorted(set(n_clients_list)):
        flows = simulate_link([Flow(bytes_per_client, per_client_bw) for _ in range(n)], backbone_bw)
        makespan = max(f.finish for f in flows)
        rows.append(BenchRow(n, n * bytes_per_client, makespan))
    config = {"experiment": "aggregate_scaling", "per_client_bw": per_client_bw,
              "backbone_bw": backbone_bw, "bytes_per_client": bytes_per_client}
    return BenchReport(rows, "sim", config)


def per_client_rate(row: BenchRow) -> float:
    """Bytes per second achieved by each client in an :func:`aggregate_scaling` row."""
    return row.bytes / row.seconds / row.parameter


# block reuse

@dataclass
class ReuseResult:
    vfl_Bps: float
    whole_object_Bps: float
    reads: int
    backend_requests: int

    @property
    def ratio(self) -> float:
        return self.vfl_Bps / self.whole_object_Bps


def reuse_advantage(
    n_objects: int = 4,
    object_bytes: int = 64 * MiB,
    reads: int = 256,
    block_bytes: int = 4 * MiB,
    *,
    model: NetworkModel = REFERENCE_LINK,
    seed: int = 0,
) -> ReuseResult:
    """Random block reads over a cached working set versus whole-object refetches."""
    store, meta, paths = make_population(n_objects, object_bytes, seed=seed)
    sim = SimulatedStore(store, model, SimClock())
    cap = max(n_objects * object_bytes, block_bytes)
    vfl = Vfl(sim, meta, VflConfig(block_size=block_bytes, readahead_blocks=0, cache_capacity=cap))
    rng = random.Random(seed)
    handles = [vfl.open(p) for p in paths]
    plan = [(rng.randrange(n_objects), rng.randrange(object_bytes // block_bytes)) for _ in range(reads)]
    nbytes = sum(len(vfl.read_at(handles[f], b * block_bytes, block_bytes)) for f, b in plan)
    whole = reads * model.request_time(object_bytes)
    return ReuseResult(
        vfl_Bps=nbytes / sim.clock.seconds,
        whole_object_Bps=nbytes / whole,
        reads=reads,
        backend_requests=vfl.cache_stats().backend_requests,
    )
