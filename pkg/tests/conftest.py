"""Shared fixtures: media builders, an in-process deferred-op dispatcher, and
a socket-level mock worker for the channel protocol."""

from __future__ import annotations

import hashlib
import random
import socketserver
import threading
import time
from concurrent.futures import ThreadPoolExecutor
from typing import Any, Mapping

import numpy as np
import pytest

from vizquery.media_codec import media_from_raw, raw_frames_payload
from vizquery.model import (
    EntityResponseDictionary,
    MediaObject,
    OperationSpec,
    PixelImage,
)
from vizquery.udf_gateway import UdfMessage, encode_frame, read_frame
from vizquery.worker_ops import execute_worker_op, OperationError


# One line per end-to-end check from test_acceptance.py; echoed after the run
# so the verdicts stay visible even under pytest's output capture.
ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


# -- media builders ----------------------------------------------------------


def image_from_array(arr) -> MediaObject:
    a = np.asarray(arr, dtype=np.uint8)
    if a.ndim == 2:
        a = a[:, :, np.newaxis]
    h, w, c = a.shape
    return MediaObject.image(PixelImage(w, h, c, a.tobytes()))


def video_from_arrays(arrays, fps=4, hints=None) -> MediaObject:
    frames = []
    for arr in arrays:
        a = np.asarray(arr, dtype=np.uint8)
        if a.ndim == 2:
            a = a[:, :, np.newaxis]
        h, w, c = a.shape
        frames.append(PixelImage(w, h, c, a.tobytes()))
    return MediaObject.video(tuple(frames), fps=fps, hints=dict(hints or {}))


def frame_array(media: MediaObject, index: int = 0) -> np.ndarray:
    f = media.frames[index]
    return np.frombuffer(f.data, dtype=np.uint8).reshape(f.height, f.width, f.channels)


def random_image(rng: np.random.Generator, width=16, height=12, channels=3) -> MediaObject:
    return image_from_array(rng.integers(0, 256, (height, width, channels), dtype=np.uint8))


def random_video(rng: np.random.Generator, width=12, height=10, frames=3, channels=3, fps=4) -> MediaObject:
    arrays = [rng.integers(0, 256, (height, width, channels), dtype=np.uint8) for _ in range(frames)]
    return video_from_arrays(arrays, fps=fps)


@pytest.fixture
def rng() -> np.random.Generator:
    return np.random.default_rng(0)


# -- ERD comparison ----------------------------------------------------------


def assert_erd_equal(got: EntityResponseDictionary, want: EntityResponseDictionary) -> None:
    """Entity-by-entity equality with a readable diff on the first mismatch."""
    a, b = got.snapshot(), want.snapshot()
    assert sorted(a) == sorted(b), f"entity sets differ: {sorted(a)} vs {sorted(b)}"
    for eid in sorted(a):
        ra, rb = a[eid], b[eid]
        assert ra.status == rb.status, f"entity {eid}: status {ra.status} != {rb.status} ({ra.error!r} / {rb.error!r})"
        assert ra.ops_done == rb.ops_done, f"entity {eid}: ops_done {ra.ops_done} != {rb.ops_done}"
        assert ra.error == rb.error, f"entity {eid}: error {ra.error!r} != {rb.error!r}"
        assert ra.media == rb.media, f"entity {eid}: media differs"


# -- in-process dispatcher for deferred ops ----------------------------------


class MockRemoteDispatcher:
    """Executes deferred ops on a thread pool, optionally with per-task jitter.

    Jitter is a deterministic function of (seed, entity id, op index), so a
    given configuration always produces the same interleaving pressure while
    still exercising out-of-order responses.
    """

    def __init__(self, max_latency_s: float = 0.0, min_latency_s: float = 0.0,
                 seed: int = 0, workers: int = 8,
                 fail_types: frozenset[str] = frozenset()):
        self.max_latency_s = max(max_latency_s, min_latency_s)
        self.min_latency_s = min_latency_s
        self.seed = seed
        self.fail_types = fail_types
        self.dispatched = 0
        self.completed = 0
        self._lock = threading.Lock()
        self._pool = ThreadPoolExecutor(max_workers=workers, thread_name_prefix="mock-remote")

    def _jitter(self, entity_id: int, op: OperationSpec) -> float:
        if self.max_latency_s <= 0:
            return 0.0
        key = f"{self.seed}:{entity_id}:{op.type}".encode()
        h = int.from_bytes(hashlib.sha256(key).digest()[:4], "big")
        frac = h / 0xFFFFFFFF
        return self.min_latency_s + frac * (self.max_latency_s - self.min_latency_s)

    def dispatch(self, entity_id, op, media, on_done) -> None:
        with self._lock:
            self.dispatched += 1

        def work():
            delay = self._jitter(entity_id, op)
            if delay:
                time.sleep(delay)
            try:
                if op.type in self.fail_types:
                    raise OperationError(f"injected failure for {op.type}")
                result = execute_worker_op(op.type, media, op.options)
            except OperationError as exc:
                with self._lock:
                    self.completed += 1
                on_done(None, str(exc))
                return
            with self._lock:
                self.completed += 1
            on_done(result, None)

        self._pool.submit(work)

    def close(self) -> None:
        self._pool.shutdown(wait=True)


@pytest.fixture
def mock_remote():
    d = MockRemoteDispatcher()
    yield d
    d.close()


# -- socket-level mock worker for the channel protocol -----------------------


class MockUdfWorker:
    """Speaks the length-prefixed channel protocol over TCP.

    Dispatches ``udf_``-prefixed op types to the in-process op registry, so a
    foreign-language worker can be stood in for during the primary test run.
    """

    def __init__(self, latency_s: float = 0.0, drop_after: int | None = None, port: int = 0):
        self.latency_s = latency_s
        # when set, the worker closes each connection after N responses —
        # simulates a crashing/restarting worker
        self.drop_after = drop_after
        self.requests_seen = 0
        self._lock = threading.Lock()
        self._dead = False
        outer = self

        class Handler(socketserver.StreamRequestHandler):
            def handle(self) -> None:
                answered = 0
                while True:
                    try:
                        msg = read_frame(self.rfile)
                    except Exception:
                        return
                    if msg is None:
                        return
                    with outer._lock:
                        outer.requests_seen += 1
                    if outer.latency_s:
                        time.sleep(outer.latency_s)
                    if outer._dead:
                        return  # crashed mid-request: hang up without replying
                    reply = outer.respond(msg)
                    try:
                        self.wfile.write(encode_frame(reply))
                        self.wfile.flush()
                    except OSError:
                        return
                    answered += 1
                    if outer.drop_after is not None and answered >= outer.drop_after:
                        return  # hang up mid-stream

        class Server(socketserver.ThreadingTCPServer):
            allow_reuse_address = True
            daemon_threads = True

        self._server = Server(("127.0.0.1", port), Handler)
        self._thread = threading.Thread(target=self._server.serve_forever, daemon=True)

    def respond(self, msg: UdfMessage) -> UdfMessage:
        op_type = msg.op_type
        if not op_type.startswith("udf_"):
            return self._error(msg, f"unknown op {op_type!r}")
        try:
            media = media_from_raw(msg.media, msg.payload)
            result = execute_worker_op(op_type[len("udf_"):], media, msg.options)
        except (OperationError, ValueError) as exc:
            return self._error(msg, str(exc))
        from vizquery.media_codec import media_descriptor

        return UdfMessage(
            direction="response",
            entity_id=msg.entity_id,
            nonce=msg.nonce,
            op_type=op_type,
            options={},
            media=media_descriptor(result),
            payload=raw_frames_payload(result),
        )

    @staticmethod
    def _error(msg: UdfMessage, error: str) -> UdfMessage:
        return UdfMessage(
            direction="response",
            entity_id=msg.entity_id,
            nonce=msg.nonce,
            op_type=msg.op_type,
            options={},
            media=None,
            error=error,
        )

    def start(self) -> "MockUdfWorker":
        self._thread.start()
        return self

    @property
    def port(self) -> int:
        return self._server.server_address[1]

    def stop(self) -> None:
        self._dead = True
        self._server.shutdown()
        self._server.server_close()


@pytest.fixture
def udf_worker():
    w = MockUdfWorker().start()
    yield w
    w.stop()
