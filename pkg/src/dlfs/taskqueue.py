"""Asynchronous task queue on the metadata service's key/value space.

Layout under ``q/<queue>/``:

- ``task/<id>``: the JSON task record
- ``pending/<seq>/<id>``: one marker per claimable task, in enqueue order
- ``seq``: counter feeding the markers

A claim is won by deleting a pending marker, which exactly one caller can
do. Every later state change is a compare-and-swap on the task record, so
each task reaches ``done`` or ``failed`` exactly once. Running tasks hold
a lease; :meth:`TaskQueue.reap` returns expired ones to the queue as if
their worker had asked for a retry.
"""

from __future__ import annotations

import json
import logging
import threading
import time
import uuid
from collections import Counter
from collections.abc import Callable
from dataclasses import asdict, dataclass, field

from .errors import DuplicateTask, InvalidTransition, NotFound
from .metastore import KVConflict, MetaService

log = logging.getLogger(__name__)

PENDING, RUNNING, DONE, FAILED = "pending", "running", "done", "failed"
STATES = (PENDING, RUNNING, DONE, FAILED)
TERMINAL = (DONE, FAILED)

# payload keys each kind requires
KINDS: dict[str, tuple[str, ...]] = {
    "ingest": ("manifest",),
    "segment": ("tiles",),
    "composite": ("tiles",),
    "bench": (),
}

DEFAULT_LEASE_S = 60.0


class TransientError(Exception):
    """Raised by a task handler to request a retry."""


@dataclass
class Task:
    id: str
    kind: str
    payload: dict
    state: str = PENDING
    attempts: int = 0
    max_attempts: int = 3
    worker: str | None = None
    lease_expires: float | None = None
    error: str | None = None
    result: object = None

    def dumps(self) -> str:
        return json.dumps(asdict(self), sort_keys=True, separators=(",", ":"))

    @classmethod
    def loads(cls, s: str) -> Task:
        return cls(**json.loads(s))


def validate_payload(kind: str, payload) -> None:
    if kind not in KINDS:
        raise ValueError(f"unknown task kind {kind!r}; expected one of {sorted(KINDS)}")
    if not isinstance(payload, dict):
        raise ValueError("payload must be a JSON object")
    missing = [k for k in KINDS[kind] if k not in payload]
    if missing:
        raise ValueError(f"{kind} payload is missing {missing}")
    json.dumps(payload)


class TaskQueue:
    def __init__(
        self,
        kv: MetaService,
        name: str = "default",
        *,
        lease_s: float = DEFAULT_LEASE_S,
        clock: Callable[[], float] = time.time,
    ) -> None:
        self.kv = kv
        self.lease_s = lease_s
        self.clock = clock
        self._p = f"q/{name}/"

    def _task_key(self, tid: str) -> str:
        return f"{self._p}task/{tid}"

    def _push_pending(self, tid: str) -> None:
        seq = self.kv.kv_incr(self._p + "seq")
        self.kv.kv_new(f"{self._p}pending/{seq:016d}/{tid}", "")

    def enqueue(self, kind: str, payload: dict, *, task_id: str | None = None, max_attempts: int = 3) -> str:
        validate_payload(kind, payload)
        if max_attempts < 1:
            raise ValueError("max_attempts must be >= 1")
        tid = task_id or uuid.uuid4().hex
        if "/" in tid or not tid:
            raise ValueError(f"invalid task id {tid!r}")
        task = Task(tid, kind, payload, max_attempts=max_attempts)
        try:
            self.kv.kv_new(self._task_key(tid), task.dumps())
        except KVConflict:
            raise DuplicateTask(f"task {tid} already exists") from None
        self._push_pending(tid)
        return tid

    def get(self, tid: str) -> Task:
        return Task.loads(self.kv.kv_get(self._task_key(tid)))

    def claim(self, worker_id: str) -> Task | None:
        while True:
            markers = self.kv.kv_keys(self._p + "pending/", limit=16)
            if not markers:
                return None
            for m in markers:
                try:
                    self.kv.kv_delete(m)
                except NotFound:
                    continue  # another worker won this one
                tid = m.rsplit("/", 1)[1]
                return self._transition(tid, self._start(worker_id), expect=(PENDING,))

    def _start(self, worker_id: str):
        def f(t: Task) -> None:
            t.state = RUNNING
            t.attempts += 1
            t.worker = worker_id
            t.lease_expires = self.clock() + self.lease_s
        return f

    def _transition(self, tid: str, change: Callable[[Task], None], expect: tuple[str, ...],
                    worker: str | None = None) -> Task:
        key = self._task_key(tid)
        while True:
            raw = self.kv.kv_get(key)
            t = Task.loads(raw)
            if t.state not in expect:
                raise InvalidTransition(f"task {tid} is {t.state}, expected {'/'.join(expect)}")
            if worker is not None and t.worker != worker:
                raise InvalidTransition(f"task {tid} is held by {t.worker}, not {worker}")
            change(t)
            try:
                self.kv.kv_cas(key, raw, t.dumps())
                return t
            except KVConflict:
                continue

    def settle(self, tid: str, outcome: str, *, worker: str | None = None,
               error: str | None = None, result=None, expired_at: float | None = None) -> str:
        """Finish a running task: ``done``, ``failed`` or ``retry``. Returns the new state.

        With ``expired_at`` the change only applies if the task's lease had
        run out by then (used by :meth:`reap`).
        """
        if outcome not in (DONE, FAILED, "retry"):
            raise ValueError(f"outcome must be done, failed or retry, not {outcome!r}")

        def f(t: Task) -> None:
            if expired_at is not None and (t.lease_expires is None or t.lease_expires > expired_at):
                raise InvalidTransition(f"task {tid} holds a live lease")
            t.error = error
            t.lease_expires = None
            if outcome == DONE:
                t.state, t.result = DONE, result
            elif outcome == FAILED or t.attempts >= t.max_attempts:
                t.state = FAILED
            else:
                t.state, t.worker = PENDING, None

        t = self._transition(tid, f, expect=(RUNNING,), worker=worker)
        if t.state == PENDING:
            self._push_pending(tid)
        return t.state

    def tasks(self) -> list[Task]:
        out = []
        for k in self.kv.kv_keys(self._p + "task/"):
            try:
                out.append(Task.loads(self.kv.kv_get(k)))
            except NotFound:
                continue
        return out

    def reap(self, now: float | None = None) -> list[str]:
        """Requeue (or fail) running tasks whose lease has expired."""
        now = self.clock() if now is None else now
        reaped = []
        for t in self.tasks():
            if t.state == RUNNING and t.lease_expires is not None and t.lease_expires <= now:
                try:
                    self.settle(t.id, "retry", worker=t.worker, error="lease expired", expired_at=now)
                    reaped.append(t.id)
                except InvalidTransition:
                    pass  # settled or re-leased meanwhile
        return reaped

    def stats(self) -> dict[str, int]:
        counts = Counter(t.state for t in self.tasks())
        out = {s: counts.get(s, 0) for s in STATES}
        out["total"] = sum(counts.values())
        return out


@dataclass
class WorkerReport:
    worker: str
    done: int = 0
    failed: int = 0
    retried: int = 0
    errors: list[str] = field(default_factory=list)


def run_worker(
    queue: TaskQueue,
    handler: Callable[[Task], object],
    worker_id: str | None = None,
    *,
    stop_when_idle: bool = True,
    poll_s: float = 0.01,
    max_tasks: int | None = None,
    stop: threading.Event | None = None,
) -> WorkerReport:
    """Claim and run tasks until the queue drains (or ``stop`` is set).

    :class:`TransientError` from the handler asks for a retry; any other
    exception fails the task outright.
    """
    wid = worker_id or f"w-{uuid.uuid4().hex[:8]}"
    rep = WorkerReport(wid)
    n = 0
    while not (stop and stop.is_set()) and (max_tasks is None or n < max_tasks):
        task = queue.claim(wid)
        if task is None:
            queue.reap()
            if stop_when_idle:
                s = queue.stats()
                if s[PENDING] == 0 and s[RUNNING] == 0:
                    break
            time.sleep(poll_s)
            continue
        n += 1
        try:
            result = handler(task)
        except TransientError as e:
            outcome, error, result = "retry", str(e), None
        except Exception as e:  # noqa: BLE001 - the task failed, the worker carries on
            log.warning("task %s failed: %s", task.id, e)
            rep.errors.append(f"{task.id}: {e}")
            outcome, error, result = FAILED, f"{type(e).__name__}: {e}", None
        else:
            outcome, error = DONE, None
        try:
            state = queue.settle(task.id, outcome, worker=wid, error=error, result=result)
        except InvalidTransition as e:
            # lease expired and the task moved on without us
            log.warning("dropping result of %s: %s", task.id, e)
            continue
        if state == DONE:
            rep.done += 1
        elif state == FAILED:
            rep.failed += 1
        else:
            rep.retried += 1
    return rep


def run_workers(queue: TaskQueue, handler: Callable[[Task], object], concurrency: int, **kw) -> list[WorkerReport]:
    reports: list[WorkerReport] = [None] * concurrency  # type: ignore[list-item]

    def body(k: int) -> None:
        reports[k] = run_worker(queue, handler, f"worker-{k}", **kw)

    threads = [threading.Thread(target=body, args=(k,), name=f"worker-{k}") for k in range(concurrency)]
    for t in threads:
        t.start()
    for t in threads:
        t.join()
    return reports
