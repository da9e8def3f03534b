"""Broker-less message channel to external user-defined-operation workers.

One TCP connection per port, shared by every query in the process. Requests
are written strictly in submit order by a single writer thread; a reader
thread matches responses back to callers by nonce, so replies may arrive in
any order. A broken connection fails everything written-but-unanswered on it
and the next submit dials a fresh one, which keeps completions exactly-once
across worker restarts.

Frame layout (also the contract for foreign-language workers):

    u32 big-endian header length
    UTF-8 JSON header: {"direction", "entity_id", "nonce", "op_type",
                        "options", "media", "error"?}
    u32 big-endian payload length
    payload: concatenated raw frames, row-major interleaved, dimensions
             given by the header's "media" descriptor

A response carries either a payload (success) or an "error" string, never
both.
"""

from __future__ import annotations

import json
import logging
import queue
import socket
import struct
import threading
import uuid
from dataclasses import dataclass, field
from typing import Any, BinaryIO, Mapping

from . import media_codec
from .model import MediaObject, OperationSpec
from .pipeline import DispatchCallback

log = logging.getLogger(__name__)

_U32 = struct.Struct(">I")
MAX_HEADER_BYTES = 1 << 20
MAX_PAYLOAD_BYTES = 1 << 28


class FramingError(ValueError):
    pass


@dataclass(frozen=True)
class UdfMessage:
    direction: str
    entity_id: int
    nonce: str
    op_type: str
    options: Mapping[str, Any]
    media: Mapping[str, Any] | None
    payload: bytes = b""
    error: str | None = None

    def __post_init__(self) -> None:
        if self.direction not in ("request", "response"):
            raise ValueError(f"bad direction {self.direction!r}")
        if self.direction == "request" and self.error is not None:
            raise ValueError("a request cannot carry an error")
        if self.error is not None and self.payload:
            raise ValueError("a response carries a payload or an error, never both")


def encode_frame(msg: UdfMessage) -> bytes:
    header: dict[str, Any] = {
        "direction": msg.direction,
        "entity_id": msg.entity_id,
        "nonce": msg.nonce,
        "op_type": msg.op_type,
        "options": dict(msg.options),
        "media": dict(msg.media) if msg.media is not None else None,
    }
    if msg.error is not None:
        header["error"] = msg.error
    header_bytes = json.dumps(header).encode("utf-8")
    return _U32.pack(len(header_bytes)) + header_bytes + _U32.pack(len(msg.payload)) + msg.payload


def _read_exact(stream: BinaryIO, n: int) -> bytes | None:
    data = stream.read(n)
    if data is None or len(data) < n:
        return None
    return data


def read_frame(stream: BinaryIO) -> UdfMessage | None:
    """One frame off a blocking stream; None on clean EOF, FramingError on junk."""
    prefix = _read_exact(stream, 4)
    if prefix is None:
        return None
    (header_len,) = _U32.unpack(prefix)
    if header_len > MAX_HEADER_BYTES:
        raise FramingError(f"header length {header_len} exceeds cap")
    header_bytes = _read_exact(stream, header_len)
    if header_bytes is None:
        raise FramingError("stream ended inside header")
    try:
        header = json.loads(header_bytes.decode("utf-8"))
    except ValueError as exc:
        raise FramingError(f"header is not JSON: {exc}") from exc
    prefix = _read_exact(stream, 4)
    if prefix is None:
        raise FramingError("stream ended before payload length")
    (payload_len,) = _U32.unpack(prefix)
    if payload_len > MAX_PAYLOAD_BYTES:
        raise FramingError(f"payload length {payload_len} exceeds cap")
    payload = _read_exact(stream, payload_len)
    if payload is None:
        raise FramingError("stream ended inside payload")
    try:
        return UdfMessage(
            direction=header["direction"],
            entity_id=header["entity_id"],
            nonce=header["nonce"],
            op_type=header["op_type"],
            options=header.get("options", {}),
            media=header.get("media"),
            payload=payload,
            error=header.get("error"),
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise FramingError(f"bad frame header: {exc}") from exc


def decode_frame(data: bytes) -> UdfMessage:
    import io

    msg = read_frame(io.BytesIO(data))
    if msg is None:
        raise FramingError("empty buffer")
    return msg


@dataclass
class _Connection:
    sock: socket.socket
    stream: BinaryIO
    generation: int
    written: set[str] = field(default_factory=set)


class UdfChannel:
    """One worker port: FIFO request writer, nonce-correlated response reader."""

    def __init__(self, host: str, port: int, connect_timeout_s: float = 5.0):
        self.host = host
        self.port = port
        self.connect_timeout_s = connect_timeout_s
        self._lock = threading.Lock()
        self._pending: dict[str, DispatchCallback] = {}
        self._conn: _Connection | None = None
        self._generation = 0
        self._write_q: queue.Queue = queue.Queue()
        self._closed = False
        self._writer = threading.Thread(target=self._writer_loop, name=f"udf-writer-{port}", daemon=True)
        self._writer.start()

    # -- public -------------------------------------------------------------

    def submit(
        self,
        entity_id: int,
        op_type: str,
        options: Mapping[str, Any],
        media: MediaObject,
        on_done: DispatchCallback,
    ) -> None:
        nonce = uuid.uuid4().hex
        try:
            msg = UdfMessage(
                direction="request",
                entity_id=entity_id,
                nonce=nonce,
                op_type=op_type,
                options=options,
                media=media_codec.media_descriptor(media),
                payload=media_codec.raw_frames_payload(media),
            )
            frame = encode_frame(msg)
        except Exception as exc:
            on_done(None, f"udf serialization: {exc}")
            return
        with self._lock:
            if self._closed:
                on_done(None, "udf channel closed")
                return
            self._pending[nonce] = on_done
        self._write_q.put((nonce, frame))

    def close(self) -> None:
        with self._lock:
            self._closed = True
        self._write_q.put(None)
        self._writer.join(timeout=5)
        self._teardown("udf channel closed")

    # -- internals ----------------------------------------------------------

    def _complete(self, nonce: str, media: MediaObject | None, error: str | None) -> None:
        with self._lock:
            on_done = self._pending.pop(nonce, None)
            if self._conn is not None:
                self._conn.written.discard(nonce)
        if on_done is None:
            log.warning("udf port %d: dropping response for unknown nonce %s", self.port, nonce)
            return
        try:
            on_done(media, error)
        except Exception:
            log.exception("udf completion callback failed")

    def _teardown(self, reason: str) -> None:
        """Close the socket and fail every request written on it."""
        with self._lock:
            conn, self._conn = self._conn, None
            victims = sorted(conn.written & set(self._pending)) if conn else []
        if conn is not None:
            try:
                conn.sock.close()
            except OSError:
                pass
        for nonce in victims:
            self._complete(nonce, None, reason)

    def _ensure_connected(self) -> _Connection:
        with self._lock:
            if self._conn is not None:
                return self._conn
        sock = socket.create_connection((self.host, self.port), timeout=self.connect_timeout_s)
        sock.settimeout(None)
        self._generation += 1
        conn = _Connection(sock, sock.makefile("rb"), self._generation)
        with self._lock:
            self._conn = conn
        threading.Thread(
            target=self._reader_loop, args=(conn,), name=f"udf-reader-{self.port}", daemon=True
        ).start()
        return conn

    def _writer_loop(self) -> None:
        while True:
            item = self._write_q.get()
            if item is None:
                return
            nonce, frame = item
            with self._lock:
                if nonce not in self._pending:  # already failed elsewhere
                    continue
            try:
                conn = self._ensure_connected()
                conn.sock.sendall(frame)
                with self._lock:
                    conn.written.add(nonce)
            except Exception as exc:
                log.debug("udf port %d write failed: %s", self.port, exc)
                self._complete(nonce, None, f"udf channel: {exc}")
                self._teardown(f"udf channel: {exc}")

    def _reader_loop(self, conn: _Connection) -> None:
        reason = "udf channel closed by worker"
        try:
            while True:
                msg = read_frame(conn.stream)
                if msg is None:
                    break
                self._handle_response(msg)
        except (FramingError, OSError) as exc:
            reason = f"udf channel broke: {exc}"
            log.debug("udf port %d reader died: %s", self.port, exc)
        with self._lock:
            still_current = self._conn is conn
        if still_current:
            self._teardown(reason)

    def _handle_response(self, msg: UdfMessage) -> None:
        if msg.direction != "response":
            log.warning("udf port %d: ignoring non-response frame", self.port)
            return
        if msg.error is not None:
            self._complete(msg.nonce, None, msg.error)
            return
        try:
            media = media_codec.media_from_raw(msg.media or {}, msg.payload)
        except media_codec.MediaCodecError as exc:
            self._complete(msg.nonce, None, f"undecodable udf response: {exc}")
            return
        self._complete(msg.nonce, media, None)


class UdfGateway:
    """Dispatcher for udf-class operations; pools one channel per port."""

    def __init__(self, host: str = "127.0.0.1", connect_timeout_s: float = 5.0):
        self.host = host
        self.connect_timeout_s = connect_timeout_s
        self._channels: dict[int, UdfChannel] = {}
        self._lock = threading.Lock()

    def connect(self, port: int) -> UdfChannel:
        with self._lock:
            channel = self._channels.get(port)
            if channel is None:
                channel = UdfChannel(self.host, port, self.connect_timeout_s)
                self._channels[port] = channel
            return channel

    def dispatch(
        self, entity_id: int, op: OperationSpec, media: MediaObject, on_done: DispatchCallback
    ) -> None:
        assert op.channel_port is not None
        try:
            channel = self.connect(op.channel_port)
        except Exception as exc:
            on_done(None, f"udf connect: {exc}")
            return
        channel.submit(entity_id, op.type, op.options, media, on_done)

    def close(self) -> None:
        with self._lock:
            channels, self._channels = list(self._channels.values()), {}
        for channel in channels:
            channel.close()

    def __enter__(self) -> "UdfGateway":
        return self

    def __exit__(self, *exc: object) -> None:
        self.close()
