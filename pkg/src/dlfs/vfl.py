"""Virtual file layer: POSIX-style reads over object storage.

``open``/``stat``/``readdir`` are answered by the metadata service alone.
``read_at`` turns a byte window into block-aligned range requests of
exactly ``block_size`` bytes (the last block of an object may be short),
keeps fetched blocks in one LRU cache shared by every handle, and reads
ahead when a handle reads sequentially.

A kernel mount adapter needs exactly the operations on :class:`Vfl`; no
kernel integration ships here.
"""

from __future__ import annotations

import io
import os
import threading
from collections import OrderedDict
from dataclasses import dataclass, field

from .errors import HandleClosed, IsADirectory, RangeError, StaleHandle
from .metastore import FileMeta, MetaService
from .objstore import ObjectKey, ObjectStore

MiB = 1 << 20


@dataclass(frozen=True)
class VflConfig:
    block_size: int = 4 * MiB
    readahead_blocks: int = 1
    cache_capacity: int = 256 * MiB

    def __post_init__(self) -> None:
        bs = self.block_size
        if bs < 4096 or bs & (bs - 1):
            raise ValueError(f"block_size must be a power of two >= 4096, got {bs}")
        if self.readahead_blocks < 0:
            raise ValueError("readahead_blocks must be >= 0")
        if self.cache_capacity < bs:
            raise ValueError("cache_capacity must hold at least one block")

    @classmethod
    def from_env(cls, env=None, **overrides) -> VflConfig:
        """Defaults, overridden by ``DLFS_*`` variables, overridden by kwargs."""
        env = os.environ if env is None else env
        kw = {}
        for var, name in (
            ("DLFS_BLOCK_SIZE", "block_size"),
            ("DLFS_READAHEAD", "readahead_blocks"),
            ("DLFS_CACHE_BYTES", "cache_capacity"),
        ):
            if env.get(var):
                kw[name] = int(env[var])
        kw.update({k: v for k, v in overrides.items() if v is not None})
        if "cache_capacity" not in kw and kw.get("block_size", 0) > cls.cache_capacity:
            kw["cache_capacity"] = 2 * kw["block_size"]
        return cls(**kw)


@dataclass
class CacheStats:
    hits: int = 0
    misses: int = 0
    backend_requests: int = 0
    backend_bytes: int = 0


@dataclass(eq=False)
class FileHandle:
    path: str
    object: ObjectKey
    size: int
    etag: str | None = None  # pinned at the first block fetch
    last_end: int | None = None
    closed: bool = False


@dataclass(eq=False)
class _Fill:
    event: threading.Event = field(default_factory=threading.Event)
    data: bytes | None = None
    etag: str | None = None
    error: BaseException | None = None


class Vfl:
    def __init__(self, store: ObjectStore, meta: MetaService, config: VflConfig | None = None) -> None:
        self.store = store
        self.meta = meta
        self.config = config or VflConfig()
        self._cache: OrderedDict[tuple[ObjectKey, int], tuple[str, bytes]] = OrderedDict()
        self._cached_bytes = 0
        self._inflight: dict[tuple[ObjectKey, int], _Fill] = {}
        self._versions: dict[ObjectKey, str] = {}  # newest etag fetched per object
        self._lock = threading.Lock()
        self._stats = CacheStats()

    # metadata

    def stat(self, path: str) -> FileMeta:
        return self.meta.get_meta(path)

    def readdir(self, path: str) -> list[tuple[str, str]]:
        return self.meta.list_dir(path)

    def cache_stats(self) -> CacheStats:
        with self._lock:
            s = self._stats
            return CacheStats(s.hits, s.misses, s.backend_requests, s.backend_bytes)

    @property
    def cached_bytes(self) -> int:
        return self._cached_bytes

    # files

    def open(self, path: str) -> FileHandle:
        rec = self.meta.get_meta(path)
        if rec.is_dir:
            raise IsADirectory(path)
        return FileHandle(path, rec.object, rec.size)

    def close(self, h: FileHandle) -> None:
        h.closed = True

    def read_at(self, h: FileHandle, offset: int, length: int) -> bytes:
        if h.closed:
            raise HandleClosed(h.path)
        if length < 0 or offset < 0:
            raise RangeError("negative offset or length")
        if offset >= h.size:
            raise RangeError(f"offset {offset} beyond end of {h.path} (size {h.size})")
        end = min(offset + length, h.size)
        if end == offset:
            return b""
        bs = self.config.block_size
        first, last = offset // bs, (end - 1) // bs
        sequential = h.last_end == offset
        parts = []
        for b in range(first, last + 1):
            data = self._block(h, b, demand=True)
            lo = offset - b * bs if b == first else 0
            hi = end - b * bs if b == last else len(data)
            parts.append(data[lo:hi] if (lo, hi) != (0, len(data)) else data)
        h.last_end = end
        if sequential:
            nblocks = -(-h.size // bs)
            for b in range(last + 1, min(last + 1 + self.config.readahead_blocks, nblocks)):
                self._block(h, b, demand=False)
        out = parts[0] if len(parts) == 1 else b"".join(parts)
        if len(out) != end - offset:
            raise StaleHandle(f"{h.path}: object shorter than recorded size")
        return out

    def _block(self, h: FileHandle, b: int, demand: bool) -> bytes:
        ck = (h.object, b)
        with self._lock:
            hit = self._cache.get(ck)
            if hit is not None and (h.etag is None or hit[0] == h.etag):
                self._cache.move_to_end(ck)
                if demand:
                    self._stats.hits += 1
                if h.etag is None:
                    h.etag = hit[0]
                return hit[1]
            if hit is not None:
                # cached under another version; refetch and let the etag decide
                self._drop(ck)
            fill = self._inflight.get(ck)
            owner = fill is None
            if owner:
                fill = self._inflight[ck] = _Fill()
                if demand:
                    self._stats.misses += 1
            elif demand:
                self._stats.hits += 1
        if owner:
            self._fill(ck, fill)
        else:
            fill.event.wait()
        if fill.error is not None:
            raise fill.error
        if h.etag is None:
            h.etag = fill.etag
        elif fill.etag != h.etag:
            raise StaleHandle(f"{h.path}: object changed since first read")
        return fill.data

    def _fill(self, ck: tuple[ObjectKey, int], fill: _Fill) -> None:
        bs = self.config.block_size
        try:
            fill.data, fill.etag = self.store.fetch(ck[0], ck[1] * bs, bs)
        except BaseException as e:
            fill.error = e
        with self._lock:
            del self._inflight[ck]
            if fill.error is None:
                self._stats.backend_requests += 1
                self._stats.backend_bytes += len(fill.data)
                self._insert(ck, fill.etag, fill.data)
        fill.event.set()

    def _insert(self, ck, etag: str, data: bytes) -> None:
        obj = ck[0]
        if self._versions.get(obj, etag) != etag:
            # the object was rewritten: blocks of the old version must not
            # be served to handles opened from now on
            for old in [k for k, v in self._cache.items() if k[0] == obj and v[0] != etag]:
                self._drop(old)
        self._versions[obj] = etag
        self._cache[ck] = (etag, data)
        self._cached_bytes += len(data)
        cap = self.config.cache_capacity
        while self._cached_bytes > cap and len(self._cache) > 1:
            old = next(iter(self._cache))
            self._drop(old)

    def _drop(self, ck) -> None:
        _, data = self._cache.pop(ck)
        self._cached_bytes -= len(data)

    def open_file(self, path: str) -> io.BufferedReader:
        """File object over :meth:`read_at`, for code that wants ``read``/``seek``."""
        return io.BufferedReader(VflRawFile(self, self.open(path)), buffer_size=self.config.block_size)


class VflRawFile(io.RawIOBase):
    def __init__(self, vfl: Vfl, handle: FileHandle) -> None:
        self._vfl = vfl
        self._h = handle
        self._pos = 0
        self.name = handle.path

    def readable(self) -> bool:
        return True

    def seekable(self) -> bool:
        return True

    def seek(self, offset: int, whence: int = io.SEEK_SET) -> int:
        base = {io.SEEK_SET: 0, io.SEEK_CUR: self._pos, io.SEEK_END: self._h.size}[whence]
        self._pos = max(0, base + offset)
        return self._pos

    def tell(self) -> int:
        return self._pos

    def readinto(self, b) -> int:
        if self._pos >= self._h.size:
            return 0
        data = self._vfl.read_at(self._h, self._pos, len(b))
        n = len(data)
        b[:n] = data
        self._pos += n
        return n

    def close(self) -> None:
        if not self.closed:
            self._vfl.close(self._h)
        super().close()
