"""Path-addressed file metadata service.

The virtual file layer answers stat and readdir from here and never asks
the object store for metadata. :class:`MetaStore` is the in-process
implementation; :class:`MetaServer` exposes one over a line protocol and
:class:`MetaClient` speaks it. Both sides implement :class:`MetaService`,
so callers do not care which one they hold.

Besides file records the service carries a small generic key/value space
with compare-and-swap, which the task queue uses as its backing store.

Wire protocol (UTF-8, one request per line, fields separated by TAB,
string fields percent-encoded, ``-`` for an absent object)::

    SET <path> <kind> <size> <mtime> <bucket> <key>   -> OK
    GET <path>            -> OK <kind> <size> <mtime> <bucket> <key> | ERR NOTFOUND
    LS <path>             -> OK <n>, then n lines "<name> <kind>" | ERR ...
    KVGET <k>             -> OK <v> | ERR NOTFOUND
    KVNEW <k> <v>         -> OK | ERR EXISTS
    KVCAS <k> <old> <new> -> OK | ERR CONFLICT | ERR NOTFOUND
    KVDEL <k>             -> OK | ERR NOTFOUND
    KVKEYS <prefix> <limit> -> OK <n>, then n lines "<k>"
    KVINCR <k>            -> OK <n>
    PING                  -> OK
"""

from __future__ import annotations

import bisect
import json
import logging
import os
import socket
import socketserver
import tempfile
import threading
from abc import ABC, abstractmethod
from dataclasses import dataclass
from pathlib import Path
from urllib.parse import quote, unquote

from .errors import (
    BackendUnavailable,
    DlfsError,
    IsADirectory,
    MalformedPath,
    NotADirectory,
    NotFound,
)
from .objstore import ObjectKey, ObjectStore

log = logging.getLogger(__name__)

FILE = "file"
DIRECTORY = "directory"
KINDS = (FILE, DIRECTORY)


def check_path(path: str) -> str:
    """Return ``path`` if it is normalized, else raise :class:`MalformedPath`."""
    if not isinstance(path, str) or not path.startswith("/"):
        raise MalformedPath(f"path must be absolute: {path!r}")
    if path == "/":
        return path
    parts = path[1:].split("/")
    for part in parts:
        if part in ("", ".", ".."):
            raise MalformedPath(f"path not normalized: {path!r}")
        if "\x00" in part:
            raise MalformedPath(f"NUL in path: {path!r}")
    return path


def parent_of(path: str) -> str:
    head = path.rsplit("/", 1)[0]
    return head or "/"


def ancestors(path: str) -> list[str]:
    """Proper ancestors, root first."""
    out = []
    while path != "/":
        path = parent_of(path)
        out.append(path)
    return out[::-1]


def join(dirpath: str, name: str) -> str:
    return dirpath.rstrip("/") + "/" + name


@dataclass(frozen=True)
class FileMeta:
    path: str
    kind: str
    size: int = 0
    mtime: float = 0.0
    object: ObjectKey | None = None

    def __post_init__(self) -> None:
        check_path(self.path)
        if self.kind not in KINDS:
            raise ValueError(f"kind must be one of {KINDS}: {self.kind!r}")
        if self.kind == DIRECTORY and self.object is not None:
            raise ValueError("directories have no object")
        if self.kind == FILE and self.object is None:
            raise ValueError("files must reference an object")
        if self.size < 0:
            raise ValueError("negative size")

    @property
    def is_dir(self) -> bool:
        return self.kind == DIRECTORY

    def to_json(self) -> dict:
        d = {"path": self.path, "kind": self.kind, "size": self.size, "mtime": self.mtime}
        if self.object is not None:
            d["bucket"], d["key"] = self.object.bucket, self.object.key
        return d

    @classmethod
    def from_json(cls, d: dict) -> FileMeta:
        obj = ObjectKey(d["bucket"], d["key"]) if d.get("bucket") else None
        return cls(d["path"], d["kind"], int(d["size"]), float(d["mtime"]), obj)


def _implied_dir(path: str) -> FileMeta:
    return FileMeta(path, DIRECTORY)


class KVConflict(DlfsError):
    """Compare-and-swap lost, or create found the key already present."""


class MetaService(ABC):
    @abstractmethod
    def set_meta(self, rec: FileMeta) -> None: ...

    @abstractmethod
    def get_meta(self, path: str) -> FileMeta: ...

    @abstractmethod
    def list_dir(self, path: str) -> list[tuple[str, str]]: ...

    @abstractmethod
    def kv_get(self, key: str) -> str: ...

    @abstractmethod
    def kv_new(self, key: str, value: str) -> None:
        """Create ``key``; raise :class:`KVConflict` if it exists."""

    @abstractmethod
    def kv_cas(self, key: str, expected: str, value: str) -> None:
        """Replace ``expected`` by ``value``; raise :class:`KVConflict` on mismatch."""

    @abstractmethod
    def kv_delete(self, key: str) -> None:
        """Remove ``key``; raise :class:`NotFound` if absent. Exactly one of
        several concurrent deleters succeeds."""

    @abstractmethod
    def kv_keys(self, prefix: str, limit: int | None = None) -> list[str]: ...

    @abstractmethod
    def kv_incr(self, key: str) -> int: ...

    def import_objects(self, store: ObjectStore, bucket: str, prefix: str = "", root: str = "/") -> int:
        """Create a file record for every object under ``prefix``.

        Key separators become directory levels below ``root``. Sizes and
        mtimes come from one ``head`` per object; this is an ingest-time
        operation, never part of a read path.
        """
        check_path(root)
        n = 0
        for okey in store.list(bucket, prefix):
            path = join(root, okey.key)
            try:
                check_path(path)
            except MalformedPath:
                log.warning("skipping object %s: key does not map to a path", okey)
                continue
            head = store.head(okey)
            self.set_meta(FileMeta(path, FILE, head.size, head.mtime, okey))
            n += 1
        return n


class MetaStore(MetaService):
    """In-memory metadata service; last write wins."""

    def __init__(self) -> None:
        self._records: dict[str, FileMeta] = {}
        self._children: dict[str, set[str]] = {"/": set()}
        self._kv: dict[str, str] = {}
        self._kv_sorted: list[str] = []
        self._lock = threading.RLock()

    # file records

    def set_meta(self, rec: FileMeta) -> None:
        path = check_path(rec.path)
        with self._lock:
            for a in ancestors(path):
                r = self._records.get(a)
                if r is not None and not r.is_dir:
                    raise NotADirectory(f"{a} is a file")
            if path == "/" and not rec.is_dir:
                raise IsADirectory("/ is a directory")
            if not rec.is_dir and self._children.get(path):
                raise IsADirectory(f"{path} has children")
            self._records[path] = rec
            child = path
            for a in reversed(ancestors(path)):
                self._children.setdefault(a, set()).add(child.rsplit("/", 1)[1])
                child = a
            if rec.is_dir:
                self._children.setdefault(path, set())

    def get_meta(self, path: str) -> FileMeta:
        check_path(path)
        with self._lock:
            rec = self._records.get(path)
            if rec is not None:
                return rec
            if path in self._children:
                return _implied_dir(path)
        raise NotFound(f"no such path: {path}")

    def list_dir(self, path: str) -> list[tuple[str, str]]:
        rec = self.get_meta(path)
        if not rec.is_dir:
            raise NotADirectory(f"{path} is a file")
        with self._lock:
            names = sorted(self._children.get(path, ()))
            out = []
            for name in names:
                r = self._records.get(join(path, name))
                out.append((name, r.kind if r is not None else DIRECTORY))
        return out

    def paths(self) -> list[str]:
        with self._lock:
            return sorted(self._records)

    # key/value space

    def kv_get(self, key: str) -> str:
        try:
            return self._kv[key]
        except KeyError:
            raise NotFound(f"no such key: {key}") from None

    def kv_new(self, key: str, value: str) -> None:
        with self._lock:
            if key in self._kv:
                raise KVConflict(f"key exists: {key}")
            self._kv[key] = value
            bisect.insort(self._kv_sorted, key)

    def kv_cas(self, key: str, expected: str, value: str) -> None:
        with self._lock:
            cur = self.kv_get(key)
            if cur != expected:
                raise KVConflict(f"value changed: {key}")
            self._kv[key] = value

    def kv_delete(self, key: str) -> None:
        with self._lock:
            if self._kv.pop(key, None) is None:
                raise NotFound(f"no such key: {key}")
            i = bisect.bisect_left(self._kv_sorted, key)
            del self._kv_sorted[i]

    def kv_keys(self, prefix: str, limit: int | None = None) -> list[str]:
        with self._lock:
            i = bisect.bisect_left(self._kv_sorted, prefix)
            out = []
            for k in self._kv_sorted[i:]:
                if not k.startswith(prefix) or (limit is not None and len(out) >= limit):
                    break
                out.append(k)
            return out

    def kv_incr(self, key: str) -> int:
        with self._lock:
            if key not in self._kv:
                self.kv_new(key, "0")
            n = int(self._kv[key]) + 1
            self._kv[key] = str(n)
            return n

    # snapshots

    def save(self, path: str | os.PathLike) -> None:
        with self._lock:
            doc = {
                "records": [r.to_json() for r in self._records.values()],
                "kv": dict(self._kv),
            }
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=".tmp-")
        with os.fdopen(fd, "w") as f:
            json.dump(doc, f)
        os.replace(tmp, path)

    @classmethod
    def load(cls, path: str | os.PathLike) -> MetaStore:
        ms = cls()
        if not Path(path).exists():
            return ms
        doc = json.loads(Path(path).read_text())
        for r in doc.get("records", []):
            ms.set_meta(FileMeta.from_json(r))
        for k, v in doc.get("kv", {}).items():
            ms.kv_new(k, v)
        return ms


# wire protocol

def _enc(s: str | None) -> str:
    if s is None:
        return "-"
    out = quote(s, safe="/:@!$&'()*+,;=-._~")
    return "%2D" if out == "-" else out


def _dec(s: str) -> str | None:
    return None if s == "-" else unquote(s)


_ERRORS = {
    NotFound: "NOTFOUND",
    MalformedPath: "MALFORMED",
    NotADirectory: "NOTDIR",
    IsADirectory: "ISDIR",
    KVConflict: "CONFLICT",
}


def _meta_fields(rec: FileMeta) -> list[str]:
    b, k = (rec.object.bucket, rec.object.key) if rec.object else (None, None)
    return [rec.kind, str(rec.size), repr(float(rec.mtime)), _enc(b), _enc(k)]


def handle_request(ms: MetaService, line: str) -> list[str]:
    """Execute one protocol line against ``ms``; return the response lines."""
    f = line.rstrip("\r\n").split("\t")
    cmd, args = f[0].upper(), f[1:]
    try:
        if cmd == "PING":
            return ["OK"]
        if cmd == "SET" and len(args) == 6:
            path, kind, size, mtime, b, k = args
            obj = ObjectKey(_dec(b), _dec(k)) if _dec(b) is not None else None
            ms.set_meta(FileMeta(_dec(path), kind, int(size), float(mtime), obj))
            return ["OK"]
        if cmd == "GET" and len(args) == 1:
            return ["\t".join(["OK", *_meta_fields(ms.get_meta(_dec(args[0])))])]
        if cmd == "LS" and len(args) == 1:
            entries = ms.list_dir(_dec(args[0]))
            return [f"OK\t{len(entries)}", *(f"{_enc(n)}\t{kind}" for n, kind in entries)]
        if cmd == "KVGET" and len(args) == 1:
            return ["OK\t" + _enc(ms.kv_get(_dec(args[0])))]
        if cmd == "KVNEW" and len(args) == 2:
            try:
                ms.kv_new(_dec(args[0]), _dec(args[1]))
            except KVConflict:
                return ["ERR\tEXISTS"]
            return ["OK"]
        if cmd == "KVCAS" and len(args) == 3:
            ms.kv_cas(_dec(args[0]), _dec(args[1]), _dec(args[2]))
            return ["OK"]
        if cmd == "KVDEL" and len(args) == 1:
            ms.kv_delete(_dec(args[0]))
            return ["OK"]
        if cmd == "KVKEYS" and len(args) == 2:
            limit = None if args[1] == "-" else int(args[1])
            keys = ms.kv_keys(_dec(args[0]) or "", limit)
            return [f"OK\t{len(keys)}", *(_enc(k) for k in keys)]
        if cmd == "KVINCR" and len(args) == 1:
            return [f"OK\t{ms.kv_incr(_dec(args[0]))}"]
    except tuple(_ERRORS) as e:
        code = next(c for t, c in _ERRORS.items() if isinstance(e, t))
        return [f"ERR\t{code}\t{_enc(str(e))}"]
    except (ValueError, TypeError) as e:
        return [f"ERR\tBADREQUEST\t{_enc(str(e))}"]
    return [f"ERR\tBADREQUEST\t{_enc('unknown command or arity: ' + cmd)}"]


class _Handler(socketserver.StreamRequestHandler):
    def handle(self) -> None:
        for raw in self.rfile:
            line = raw.decode("utf-8")
            if not line.strip():
                continue
            out = handle_request(self.server.meta, line)
            self.wfile.write(("\n".join(out) + "\n").encode("utf-8"))
            self.wfile.flush()


class MetaServer(socketserver.ThreadingTCPServer):
    daemon_threads = True
    allow_reuse_address = True

    def __init__(self, meta: MetaService, host: str = "127.0.0.1", port: int = 0) -> None:
        self.meta = meta
        super().__init__((host, port), _Handler)

    @property
    def address(self) -> str:
        host, port = self.server_address[:2]
        return f"{host}:{port}"

    def start(self, poll_interval: float = 0.05) -> threading.Thread:
        t = threading.Thread(target=self.serve_forever, args=(poll_interval,), name="metastore", daemon=True)
        t.start()
        return t


def parse_endpoint(endpoint: str) -> tuple[str, int]:
    host, _, port = endpoint.rpartition(":")
    if not host or not port.isdigit():
        raise ValueError(f"metastore endpoint must be host:port, got {endpoint!r}")
    return host, int(port)


class MetaClient(MetaService):
    """Client for :class:`MetaServer`. One connection, shared by threads."""

    def __init__(self, endpoint: str, timeout: float = 30.0) -> None:
        host, port = parse_endpoint(endpoint)
        try:
            self._sock = socket.create_connection((host, port), timeout=timeout)
        except OSError as e:
            raise BackendUnavailable(f"metastore {endpoint}: {e}") from e
        self._r = self._sock.makefile("rb")
        self._lock = threading.Lock()

    def close(self) -> None:
        self._r.close()
        self._sock.close()

    def __enter__(self) -> MetaClient:
        return self

    def __exit__(self, *exc) -> None:
        self.close()

    def _call(self, *fields: str) -> list[str]:
        line = "\t".join(fields) + "\n"
        with self._lock:
            try:
                self._sock.sendall(line.encode("utf-8"))
                first = self._readline()
                head = first.split("\t")
                extra = []
                if head[0] == "OK" and fields[0] in ("LS", "KVKEYS"):
                    extra = [self._readline() for _ in range(int(head[1]))]
            except OSError as e:
                raise BackendUnavailable(f"metastore connection: {e}") from e
        if head[0] == "ERR":
            code = head[1] if len(head) > 1 else ""
            msg = _dec(head[2]) if len(head) > 2 else code
            for etype, c in _ERRORS.items():
                if c == code:
                    raise etype(msg)
            if code == "EXISTS":
                raise KVConflict(msg)
            raise DlfsError(f"metastore: {code} {msg}")
        return [first, *extra]

    def _readline(self) -> str:
        raw = self._r.readline()
        if not raw:
            raise BackendUnavailable("metastore closed the connection")
        return raw.decode("utf-8").rstrip("\n")

    def ping(self) -> None:
        self._call("PING")

    def set_meta(self, rec: FileMeta) -> None:
        self._call("SET", _enc(rec.path), *_meta_fields(rec))

    def get_meta(self, path: str) -> FileMeta:
        check_path(path)
        _, kind, size, mtime, b, k = self._call("GET", _enc(path))[0].split("\t")
        obj = ObjectKey(_dec(b), _dec(k)) if _dec(b) is not None else None
        return FileMeta(path, kind, int(size), float(mtime), obj)

    def list_dir(self, path: str) -> list[tuple[str, str]]:
        check_path(path)
        lines = self._call("LS", _enc(path))[1:]
        return [(_dec(n), kind) for n, kind in (ln.split("\t") for ln in lines)]

    def kv_get(self, key: str) -> str:
        return _dec(self._call("KVGET", _enc(key))[0].split("\t")[1])

    def kv_new(self, key: str, value: str) -> None:
        self._call("KVNEW", _enc(key), _enc(value))

    def kv_cas(self, key: str, expected: str, value: str) -> None:
        self._call("KVCAS", _enc(key), _enc(expected), _enc(value))

    def kv_delete(self, key: str) -> None:
        self._call("KVDEL", _enc(key))

    def kv_keys(self, prefix: str, limit: int | None = None) -> list[str]:
        lim = "-" if limit is None else str(limit)
        return [_dec(k) for k in self._call("KVKEYS", _enc(prefix), lim)[1:]]

    def kv_incr(self, key: str) -> int:
        return int(self._call("KVINCR", _enc(key))[0].split("\t")[1])
