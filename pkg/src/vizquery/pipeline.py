"""Two-queue asynchronous execution engine.

Per query there are exactly three cooperating actors:

* the main thread filters entities and enqueues every task to Queue1 without
  ever waiting on an operation,
* the native worker drains Queue1, runs consecutive native ops in place, and
  hands tasks whose next op is remote/udf over to Queue2,
* the deferred worker drains Queue2 and issues non-blocking dispatches; the
  response callback (running on an I/O completion context) re-enqueues the
  task to Queue1 or finalizes the entity.

Queue1 therefore has two producers — main and the response path — and their
enqueues are serialized by an explicit lock. The per-entity result dictionary
is updated after every single operation, so a partial pipeline is observable
at any failure point. Termination is a completed-entities counter hitting the
total, which implies both queues are empty and nothing is in flight.

``run_sync_baseline`` is the one-entity-at-a-time blocking mode used as the
correctness oracle and the slow end of the benchmark comparisons.
"""

from __future__ import annotations

import logging
import queue
import threading
import time
from dataclasses import dataclass, field
from enum import Enum
from typing import Callable, Mapping, Protocol, Sequence

from .model import (
    EntityResponseDictionary,
    EntityTask,
    ExecClass,
    MediaObject,
    OperationSpec,
)
from .native_ops import execute_native

log = logging.getLogger(__name__)

#: on_done(media, error) — exactly one of the two is set
DispatchCallback = Callable[[MediaObject | None, str | None], None]


class Dispatcher(Protocol):
    def dispatch(
        self, entity_id: int, op: OperationSpec, media: MediaObject, on_done: DispatchCallback
    ) -> None:
        """Issue the operation without blocking; invoke on_done exactly once later."""


class ExecutorConfigError(RuntimeError):
    """The pipeline references an exec class no executor is configured for."""


@dataclass
class Executors:
    remote: Dispatcher | None = None
    udf: Dispatcher | None = None

    def for_class(self, exec_class: ExecClass) -> Dispatcher:
        d = self.remote if exec_class is ExecClass.REMOTE else self.udf
        if d is None:
            raise ExecutorConfigError(f"no executor configured for {exec_class.value} operations")
        return d


class Mode(str, Enum):
    ASYNC = "async"
    SYNC = "sync"


@dataclass
class PipelineStats:
    """Instrumentation the tests read; not part of the query result."""

    total_entities: int = 0
    dispatch_count: int = 0
    completion_count: int = 0
    last_main_enqueue_ts: float | None = None
    first_response_ts: float | None = None
    pc_traces: dict[int, list[int]] = field(default_factory=dict)
    ownership_violations: list[str] = field(default_factory=list)


_SENTINEL = None


def check_executors(ops: Sequence[OperationSpec], executors: Executors) -> None:
    for op in ops:
        if op.exec_class is not ExecClass.NATIVE:
            executors.for_class(op.exec_class)


class Pipeline:
    """One query's worth of asynchronous execution state."""

    def __init__(self, ops: Sequence[OperationSpec], executors: Executors) -> None:
        check_executors(ops, executors)
        self.ops = tuple(ops)
        self.executors = executors
        self.erd = EntityResponseDictionary()
        self.stats = PipelineStats()
        self.queue1: queue.Queue = queue.Queue()
        self.queue2: queue.Queue = queue.Queue()
        # main and the response path both produce into Queue1; this lock keeps
        # those two producers mutually exclusive
        self._q1_enqueue_lock = threading.Lock()
        self._state_lock = threading.Lock()
        self._total = 0
        self._completed = 0
        self._inflight = 0
        self._done = threading.Event()

    # -- ownership instrumentation ------------------------------------------

    def _handoff(self, task: EntityTask, expected: str | None, new_owner: str | None) -> bool:
        """Atomically move a task between owners, recording any violation."""
        with self._state_lock:
            if task.owner != expected:
                self.stats.ownership_violations.append(
                    f"entity {task.entity_id}: owner {task.owner!r}, expected {expected!r}"
                )
                return False
            task.owner = new_owner
            return True

    # -- counters -----------------------------------------------------------

    def check_termination(self) -> bool:
        with self._state_lock:
            return self._completed == self._total

    def _entity_done(self) -> None:
        with self._state_lock:
            self._completed += 1
            if self._completed == self._total:
                self._done.set()

    @property
    def inflight(self) -> int:
        with self._state_lock:
            return self._inflight

    def _trace_pc(self, task: EntityTask) -> None:
        with self._state_lock:
            self.stats.pc_traces.setdefault(task.entity_id, []).append(task.pc)

    # -- thread bodies ------------------------------------------------------

    def _enqueue_task(self, task: EntityTask) -> None:
        with self._q1_enqueue_lock:
            self.queue1.put(task)

    def _main_enqueue_all(self, entity_ids: Sequence[int], fetch_media: Callable[[int], MediaObject]) -> None:
        for entity_id in entity_ids:
            try:
                media = fetch_media(entity_id)
            except Exception as exc:
                log.debug("fetch failed for entity %d: %s", entity_id, exc)
                self.erd.mark_failed(entity_id, None, 0, f"fetch: {exc}")
                self._entity_done()
                continue
            task = EntityTask(entity_id, media, self.ops, pc=0, owner="main")
            self._trace_pc(task)
            self._handoff(task, "main", None)
            self._enqueue_task(task)
            self.stats.last_main_enqueue_ts = time.monotonic()

    def _fail(self, task: EntityTask, error: str) -> None:
        self.erd.mark_failed(task.entity_id, task.media, task.pc, error)
        self._entity_done()

    def _native_worker(self) -> None:
        while True:
            task = self.queue1.get()
            if task is _SENTINEL:
                return
            self._handoff(task, None, "native")
            failed = False
            while task.pc < len(task.ops) and task.ops[task.pc].exec_class is ExecClass.NATIVE:
                op = task.ops[task.pc]
                try:
                    task.media = execute_native(op, task.media)
                except Exception as exc:
                    log.debug("entity %d failed at op %d (%s): %s", task.entity_id, task.pc, op.type, exc)
                    self._handoff(task, "native", None)
                    self._fail(task, f"op {task.pc} ({op.type}): {exc}")
                    failed = True
                    break
                task.pc += 1
                self._trace_pc(task)
                self.erd.update_progress(task.entity_id, task.media, task.pc)
            if failed:
                continue
            if task.pc == len(task.ops):
                self.erd.mark_ok(task.entity_id, task.media, task.pc)
                self._handoff(task, "native", None)
                self._entity_done()
            else:
                # next op is remote/udf: hand over untouched, release first
                self._handoff(task, "native", None)
                self.queue2.put(task)

    def _deferred_worker(self) -> None:
        while True:
            task = self.queue2.get()
            if task is _SENTINEL:
                return
            self._handoff(task, None, "deferred")
            op = task.ops[task.pc]
            dispatcher = self.executors.for_class(op.exec_class)
            with self._state_lock:
                self._inflight += 1
                self.stats.dispatch_count += 1
            self._handoff(task, "deferred", "inflight")

            def on_done(media: MediaObject | None, error: str | None, task: EntityTask = task) -> None:
                self._on_response(task, media, error)

            try:
                dispatcher.dispatch(task.entity_id, op, task.media, on_done)
            except Exception as exc:
                # dispatch refused synchronously; fold into the response path
                on_done(None, f"dispatch: {exc}")
            # no waiting: straight on to the next queued task

    def _on_response(self, task: EntityTask, media: MediaObject | None, error: str | None) -> None:
        with self._state_lock:
            self._inflight -= 1
            self.stats.completion_count += 1
            if self.stats.first_response_ts is None:
                self.stats.first_response_ts = time.monotonic()
        if not self._handoff(task, "inflight", "response"):
            log.warning("dropping duplicate/unknown response for entity %d", task.entity_id)
            # the counters above were optimistic; undo
            with self._state_lock:
                self._inflight += 1
                self.stats.completion_count -= 1
            return
        if error is not None:
            op = task.ops[task.pc]
            self._handoff(task, "response", None)
            self._fail(task, f"op {task.pc} ({op.type}): {error}")
            return
        assert media is not None
        task.media = media
        task.pc += 1
        self._trace_pc(task)
        self.erd.update_progress(task.entity_id, task.media, task.pc)
        # uniform routing: even a completed or still-remote task goes back
        # through Queue1 so the native worker stays the sole classifier
        self._handoff(task, "response", None)
        self._enqueue_task(task)

    # -- entry points -------------------------------------------------------

    def run(self, entity_ids: Sequence[int], fetch_media: Callable[[int], MediaObject]) -> EntityResponseDictionary:
        self._total = self.stats.total_entities = len(entity_ids)
        if self._total == 0:
            self._done.set()
            return self.erd
        native = threading.Thread(target=self._native_worker, name="pipeline-native", daemon=True)
        deferred = threading.Thread(target=self._deferred_worker, name="pipeline-deferred", daemon=True)
        native.start()
        deferred.start()
        try:
            self._main_enqueue_all(entity_ids, fetch_media)
            self._done.wait()
        finally:
            self.queue1.put(_SENTINEL)
            self.queue2.put(_SENTINEL)
            native.join()
            deferred.join()
        return self.erd


def run_pipeline(
    entity_ids: Sequence[int],
    ops: Sequence[OperationSpec],
    executors: Executors,
    fetch_media: Callable[[int], MediaObject],
    mode: Mode = Mode.ASYNC,
) -> EntityResponseDictionary:
    if mode is Mode.SYNC:
        return run_sync_baseline(entity_ids, ops, executors, fetch_media)
    return Pipeline(ops, executors).run(entity_ids, fetch_media)


class _OpFailed(Exception):
    pass


def _dispatch_blocking(
    dispatcher: Dispatcher, entity_id: int, op: OperationSpec, media: MediaObject
) -> MediaObject:
    done = threading.Event()
    box: dict[str, object] = {}

    def on_done(result: MediaObject | None, error: str | None) -> None:
        box["media"], box["error"] = result, error
        done.set()

    try:
        dispatcher.dispatch(entity_id, op, media, on_done)
    except Exception as exc:
        raise _OpFailed(f"dispatch: {exc}") from exc
    done.wait()
    if box["error"] is not None:
        raise _OpFailed(box["error"])
    result = box["media"]
    assert isinstance(result, MediaObject)
    return result


def run_sync_baseline(
    entity_ids: Sequence[int],
    ops: Sequence[OperationSpec],
    executors: Executors,
    fetch_media: Callable[[int], MediaObject],
) -> EntityResponseDictionary:
    """One entity at a time, each op blocking to completion: the correctness oracle."""
    check_executors(ops, executors)
    erd = EntityResponseDictionary()
    for entity_id in entity_ids:
        try:
            media = fetch_media(entity_id)
        except Exception as exc:
            erd.mark_failed(entity_id, None, 0, f"fetch: {exc}")
            continue
        pc = 0
        failed = False
        for op in ops:
            try:
                if op.exec_class is ExecClass.NATIVE:
                    media = execute_native(op, media)
                else:
                    media = _dispatch_blocking(executors.for_class(op.exec_class), entity_id, op, media)
            except _OpFailed as exc:
                erd.mark_failed(entity_id, media, pc, f"op {pc} ({op.type}): {exc}")
                failed = True
                break
            except Exception as exc:
                erd.mark_failed(entity_id, media, pc, f"op {pc} ({op.type}): {exc}")
                failed = True
                break
            pc += 1
            erd.update_progress(entity_id, media, pc)
        if not failed:
            erd.mark_ok(entity_id, media, pc)
    return erd
