"""Blob storage with whole-object writes and ranged reads.

Backends:

- :class:`MemoryStore` keeps objects in a dict.
- :class:`DirStore` keeps one file per object under a root directory.
- :class:`SimulatedStore` wraps another store and charges every request
  virtual time under a :class:`NetworkModel`.
- :class:`RecordingStore` wraps another store and logs every request.

Reads past the end of an object are truncated, as an HTTP range request
would be; a read starting at or past the end is a :class:`RangeError`.
"""

from __future__ import annotations

import os
import tempfile
import threading
import time
from abc import ABC, abstractmethod
from dataclasses import dataclass, field
from pathlib import Path
from urllib.parse import quote, unquote

from ._fnv import fnv1a64_hex
from .errors import BackendUnavailable, NotFound, RangeError

SEP = "/"


@dataclass(frozen=True, order=True)
class ObjectKey:
    bucket: str
    key: str

    def __post_init__(self) -> None:
        if not self.bucket or SEP in self.bucket:
            raise ValueError(f"invalid bucket name {self.bucket!r}")
        if not self.key:
            raise ValueError("object key must be non-empty")
        if self.key.startswith(SEP):
            raise ValueError(f"object key must not start with {SEP!r}: {self.key!r}")

    def __str__(self) -> str:
        return f"{self.bucket}/{self.key}"


@dataclass(frozen=True)
class ObjectMeta:
    size: int
    etag: str
    mtime: float


@dataclass(frozen=True)
class NetworkModel:
    """Per-request cost: ``overhead + latency + nbytes / bandwidth`` seconds."""

    latency_s: float = 40e-6
    bandwidth_Bps: float = 8.6e9 / 8
    per_request_overhead_s: float = 0.0

    def __post_init__(self) -> None:
        if self.latency_s < 0 or self.per_request_overhead_s < 0:
            raise ValueError("latency and overhead must be non-negative")
        if not self.bandwidth_Bps > 0:
            raise ValueError("bandwidth must be positive")

    def request_time(self, nbytes: int) -> float:
        return self.per_request_overhead_s + self.latency_s + nbytes / self.bandwidth_Bps


def _window(size: int, offset: int, length: int, key: ObjectKey) -> tuple[int, int]:
    if offset < 0 or length < 0:
        raise RangeError(f"negative offset or length for {key}")
    if offset >= size:
        raise RangeError(f"offset {offset} beyond end of {key} (size {size})")
    return offset, min(offset + length, size)


class ObjectStore(ABC):
    """Uniform blob interface; all backends are thread-safe."""

    @abstractmethod
    def put(self, key: ObjectKey, data: bytes) -> ObjectMeta: ...

    @abstractmethod
    def fetch(self, key: ObjectKey, offset: int, length: int) -> tuple[bytes, str]:
        """Ranged read returning ``(bytes, etag)`` of the version read."""

    @abstractmethod
    def head(self, key: ObjectKey) -> ObjectMeta: ...

    @abstractmethod
    def list(
        self, bucket: str, prefix: str = "", *, start_after: str | None = None, limit: int | None = None
    ) -> list[ObjectKey]:
        """Keys under ``prefix`` in lexicographic order.

        ``start_after`` and ``limit`` page through large listings; pages
        concatenate into the same strictly increasing sequence.
        """

    def get_range(self, key: ObjectKey, offset: int, length: int) -> bytes:
        return self.fetch(key, offset, length)[0]

    def get(self, key: ObjectKey) -> bytes:
        """Whole object, including the empty object."""
        meta = self.head(key)
        if meta.size == 0:
            return b""
        return self.get_range(key, 0, meta.size)


def _page(keys, prefix: str, start_after: str | None, limit: int | None) -> list[str]:
    out = sorted(k for k in keys if k.startswith(prefix) and (start_after is None or k > start_after))
    return out if limit is None else out[:limit]


@dataclass(frozen=True)
class _Blob:
    data: bytes
    meta: ObjectMeta


class MemoryStore(ObjectStore):
    def __init__(self) -> None:
        self._objects: dict[ObjectKey, _Blob] = {}
        self._lock = threading.Lock()

    def put(self, key: ObjectKey, data: bytes) -> ObjectMeta:
        data = bytes(data)
        meta = ObjectMeta(len(data), fnv1a64_hex(data), time.time())
        blob = _Blob(data, meta)
        with self._lock:
            self._objects[key] = blob
        return meta

    def _blob(self, key: ObjectKey) -> _Blob:
        try:
            return self._objects[key]
        except KeyError:
            raise NotFound(f"no such object: {key}") from None

    def fetch(self, key: ObjectKey, offset: int, length: int) -> tuple[bytes, str]:
        blob = self._blob(key)
        lo, hi = _window(blob.meta.size, offset, length, key)
        return blob.data[lo:hi], blob.meta.etag

    def head(self, key: ObjectKey) -> ObjectMeta:
        return self._blob(key).meta

    def list(self, bucket, prefix="", *, start_after=None, limit=None):
        with self._lock:
            names = [k.key for k in self._objects if k.bucket == bucket]
        return [ObjectKey(bucket, k) for k in _page(names, prefix, start_after, limit)]


def _escape(name: str) -> str:
    # '%' itself is escaped, so unquote(_escape(x)) == x and the result has no '/';
    # a leading '.' is escaped to keep clear of '.', '..' and the hidden sidecars
    out = quote(name, safe="-_.~")
    return "%2E" + out[1:] if out.startswith(".") else out


class DirStore(ObjectStore):
    """One content file per object: ``<root>/<bucket>/<escaped key>``.

    Content files are byte-exact copies of the object. The etag lives in a
    sidecar under ``.meta`` tagged with the content file's inode, so a
    reader can tell whether the etag matches the file it opened. Writes go
    through a temp file and ``os.replace``: readers see the old or the new
    object, never a mix.
    """

    def __init__(self, root: str | os.PathLike) -> None:
        self.root = Path(root)
        self.root.mkdir(parents=True, exist_ok=True)

    def _paths(self, key: ObjectKey) -> tuple[Path, Path]:
        bucket = self.root / _escape(key.bucket)
        name = _escape(key.key)
        return bucket / name, bucket / ".meta" / name

    def put(self, key: ObjectKey, data: bytes) -> ObjectMeta:
        path, side = self._paths(key)
        data = bytes(data)
        etag = fnv1a64_hex(data)
        try:
            side.parent.mkdir(parents=True, exist_ok=True)
            fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=".tmp-")
            try:
                with os.fdopen(fd, "wb") as f:
                    f.write(data)
                    ino = os.fstat(f.fileno()).st_ino
                # sidecar names the inode it describes; readers check the pairing
                self._atomic_write(side, f"{etag} {ino}".encode())
                os.replace(tmp, path)
            except BaseException:
                if os.path.exists(tmp):
                    os.unlink(tmp)
                raise
        except OSError as e:
            raise BackendUnavailable(str(e)) from e
        return ObjectMeta(len(data), etag, path.stat().st_mtime)

    @staticmethod
    def _atomic_write(path: Path, data: bytes) -> None:
        fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=".tmp-")
        try:
            with os.fdopen(fd, "wb") as f:
                f.write(data)
            os.replace(tmp, path)
        except BaseException:
            if os.path.exists(tmp):
                os.unlink(tmp)
            raise

    def _etag_for(self, f, side: Path) -> str:
        ino = os.fstat(f.fileno()).st_ino
        for _ in range(50):
            try:
                etag, _, sino = side.read_text().partition(" ")
            except FileNotFoundError:
                etag, sino = "", ""
            if sino == str(ino):
                return etag
            time.sleep(0.001)
        # content written by something other than put(): hash what we opened
        pos = f.tell()
        f.seek(0)
        etag = fnv1a64_hex(f.read())
        f.seek(pos)
        return etag

    def fetch(self, key: ObjectKey, offset: int, length: int) -> tuple[bytes, str]:
        path, side = self._paths(key)
        try:
            with open(path, "rb") as f:
                size = os.fstat(f.fileno()).st_size
                lo, hi = _window(size, offset, length, key)
                f.seek(lo)
                data = f.read(hi - lo)
                etag = self._etag_for(f, side)
        except FileNotFoundError:
            raise NotFound(f"no such object: {key}") from None
        return data, etag

    def head(self, key: ObjectKey) -> ObjectMeta:
        path, side = self._paths(key)
        try:
            with open(path, "rb") as f:
                st = os.fstat(f.fileno())
                etag = self._etag_for(f, side)
        except FileNotFoundError:
            raise NotFound(f"no such object: {key}") from None
        return ObjectMeta(st.st_size, etag, st.st_mtime)

    def list(self, bucket, prefix="", *, start_after=None, limit=None):
        bdir = self.root / _escape(bucket)
        if not bdir.is_dir():
            return []
        names = [unquote(p.name) for p in bdir.iterdir() if p.is_file() and not p.name.startswith(".")]
        return [ObjectKey(bucket, k) for k in _page(names, prefix, start_after, limit)]


@dataclass
class RequestLog:
    op: str
    key: ObjectKey | None
    offset: int
    length: int
    nbytes: int


class RecordingStore(ObjectStore):
    """Pass-through wrapper that records every backend request."""

    def __init__(self, inner: ObjectStore) -> None:
        self.inner = inner
        self.log: list[RequestLog] = []
        self._lock = threading.Lock()

    def _record(self, *entry) -> None:
        with self._lock:
            self.log.append(RequestLog(*entry))

    def ranges(self) -> list[RequestLog]:
        return [r for r in self.log if r.op == "get"]

    def put(self, key, data):
        meta = self.inner.put(key, data)
        self._record("put", key, 0, len(data), len(data))
        return meta

    def fetch(self, key, offset, length):
        data, etag = self.inner.fetch(key, offset, length)
        self._record("get", key, offset, length, len(data))
        return data, etag

    def head(self, key):
        self._record("head", key, 0, 0, 0)
        return self.inner.head(key)

    def list(self, bucket, prefix="", *, start_after=None, limit=None):
        self._record("list", None, 0, 0, 0)
        return self.inner.list(bucket, prefix, start_after=start_after, limit=limit)


@dataclass
class SimClock:
    seconds: float = 0.0
    requests: int = 0
    bytes: int = 0
    _lock: threading.Lock = field(default_factory=threading.Lock, repr=False, compare=False)

    def charge(self, dt: float, nbytes: int) -> None:
        with self._lock:
            self.seconds += dt
            self.requests += 1
            self.bytes += nbytes

    def reset(self) -> None:
        with self._lock:
            self.seconds, self.requests, self.bytes = 0.0, 0, 0


class SimulatedStore(ObjectStore):
    """Charges each request ``model.request_time(transferred bytes)`` of virtual time.

    Returned bytes are never altered. Wall-clock time is never consulted.
    """

    def __init__(self, inner: ObjectStore, model: NetworkModel, clock: SimClock | None = None) -> None:
        self.inner = inner
        self.model = model
        self.clock = clock or SimClock()

    @property
    def virtual_time(self) -> float:
        return self.clock.seconds

    def put(self, key, data):
        meta = self.inner.put(key, data)
        self.clock.charge(self.model.request_time(len(data)), len(data))
        return meta

    def fetch(self, key, offset, length):
        data, etag = self.inner.fetch(key, offset, length)
        self.clock.charge(self.model.request_time(len(data)), len(data))
        return data, etag

    def head(self, key):
        meta = self.inner.head(key)
        self.clock.charge(self.model.request_time(0), 0)
        return meta

    def list(self, bucket, prefix="", *, start_after=None, limit=None):
        keys = self.inner.list(bucket, prefix, start_after=start_after, limit=limit)
        self.clock.charge(self.model.request_time(0), 0)
        return keys


def open_store(uri: str) -> ObjectStore:
    """Build a store from ``memory://``, ``dir:PATH`` / ``dir://PATH``, or
    ``sim+<inner uri>?latency=S&bandwidth=BPS&overhead=S``."""
    from urllib.parse import parse_qs

    if uri.startswith("sim+"):
        inner, _, query = uri[4:].partition("?")
        q = {k: float(v[-1]) for k, v in parse_qs(query).items()}
        model = NetworkModel(
            latency_s=q.get("latency", 40e-6),
            bandwidth_Bps=q.get("bandwidth", 8.6e9 / 8),
            per_request_overhead_s=q.get("overhead", 0.0),
        )
        return SimulatedStore(open_store(inner), model)
    if uri in ("memory", "memory://", "memory:"):
        return MemoryStore()
    for scheme in ("dir://", "dir:", "file://"):
        if uri.startswith(scheme):
            return DirStore(uri[len(scheme):])
    raise ValueError(f"unrecognised store URI {uri!r}")
