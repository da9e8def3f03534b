"""Message-channel dispatch: framing, correlation, and recovery after a
worker vanishes mid-conversation."""

from __future__ import annotations

import io
import socket
import socketserver
import struct
import threading
import time

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from conftest import MockUdfWorker, image_from_array, random_image, video_from_arrays
from vizquery.model import ExecClass, OperationSpec
from vizquery.udf_gateway import (
    FramingError,
    UdfGateway,
    UdfMessage,
    decode_frame,
    encode_frame,
    read_frame,
)
from vizquery.worker_ops import execute_worker_op


def udf_op(op_type, port, **options):
    return OperationSpec(op_type, ExecClass.UDF, options, channel_port=port)


def dispatch_sync(gateway, op, media, entity_id=1, timeout=30):
    done = threading.Event()
    box = {}

    def on_done(result, error):
        box["r"], box["e"] = result, error
        done.set()

    gateway.dispatch(entity_id, op, media, on_done)
    assert done.wait(timeout), "no completion callback"
    return box["r"], box["e"]


# -- framing ------------------------------------------------------------------


json_scalars = st.one_of(st.integers(-1000, 1000), st.text(max_size=10), st.booleans())


@given(
    st.integers(0, 10**6),
    st.text(min_size=1, max_size=20),
    st.dictionaries(st.text(min_size=1, max_size=6), json_scalars, max_size=4),
    st.binary(max_size=200),
)
@settings(max_examples=50)
def test_frame_round_trip(entity_id, op_type, options, payload):
    msg = UdfMessage(
        direction="request",
        entity_id=entity_id,
        nonce="n0",
        op_type=op_type,
        options=options,
        media={"kind": "image", "width": 1, "height": 1, "channels": 1, "frame_count": 1},
        payload=payload,
    )
    back = decode_frame(encode_frame(msg))
    assert back == msg


def test_frame_layout_is_length_prefixed():
    msg = UdfMessage("request", 1, "abc", "udf_x", {}, None, payload=b"\x01\x02")
    data = encode_frame(msg)
    (header_len,) = struct.unpack_from(">I", data, 0)
    header = data[4 : 4 + header_len]
    (payload_len,) = struct.unpack_from(">I", data, 4 + header_len)
    assert payload_len == 2
    assert data[8 + header_len :] == b"\x01\x02"
    import json

    doc = json.loads(header)
    assert doc["nonce"] == "abc"
    assert doc["direction"] == "request"


def test_error_response_frame():
    msg = UdfMessage("response", 1, "n", "udf_x", {}, None, error="boom")
    assert decode_frame(encode_frame(msg)).error == "boom"


def test_response_cannot_carry_payload_and_error():
    with pytest.raises(ValueError):
        UdfMessage("response", 1, "n", "udf_x", {}, None, payload=b"x", error="boom")


def test_request_cannot_carry_error():
    with pytest.raises(ValueError):
        UdfMessage("request", 1, "n", "udf_x", {}, None, error="no")


def test_read_frame_clean_eof_is_none():
    assert read_frame(io.BytesIO(b"")) is None


def test_read_frame_truncated_raises():
    data = encode_frame(UdfMessage("request", 1, "n", "udf_x", {}, None, payload=b"abc"))
    with pytest.raises(FramingError):
        read_frame(io.BytesIO(data[:-1]))


def test_read_frame_junk_header_raises():
    bad = struct.pack(">I", 4) + b"(((" + b")" + struct.pack(">I", 0)
    with pytest.raises(FramingError):
        read_frame(io.BytesIO(bad))


def test_read_frame_oversized_header_rejected():
    bad = struct.pack(">I", 1 << 24)
    with pytest.raises(FramingError):
        read_frame(io.BytesIO(bad + b"x" * 64))


# -- live round trips ---------------------------------------------------------


def test_udf_grayscale_matches_native(rng, udf_worker):
    media = random_image(rng, 14, 10)
    with UdfGateway() as gw:
        result, error = dispatch_sync(gw, udf_op("udf_grayscale", udf_worker.port), media)
    assert error is None
    assert result == execute_worker_op("grayscale", media, {})


def test_udf_video_round_trip(rng, udf_worker):
    vid = video_from_arrays([rng.integers(0, 256, (5, 7, 3), dtype=np.uint8) for _ in range(3)], fps=3)
    with UdfGateway() as gw:
        result, error = dispatch_sync(gw, udf_op("udf_grayscale", udf_worker.port), vid)
    assert error is None
    assert result == execute_worker_op("grayscale", vid, {})


def test_udf_unknown_op_error(rng, udf_worker):
    with UdfGateway() as gw:
        result, error = dispatch_sync(gw, udf_op("frobnicate", udf_worker.port), random_image(rng))
    assert result is None
    assert "unknown op" in error


def test_udf_operation_failure_error(rng, udf_worker):
    op = udf_op("udf_crop", udf_worker.port, x=0, y=0, width=99, height=99)
    with UdfGateway() as gw:
        result, error = dispatch_sync(gw, op, random_image(rng, 4, 4))
    assert result is None
    assert "crop" in error


def test_gateway_pools_channels_per_port(udf_worker):
    with UdfGateway() as gw:
        a = gw.connect(udf_worker.port)
        b = gw.connect(udf_worker.port)
        assert a is b


def test_correlation_under_concurrency(rng, udf_worker):
    # distinct inputs, concurrent submits: every reply must match its own input
    inputs = {i: random_image(rng, 6 + i, 5) for i in range(12)}
    expected = {i: execute_worker_op("grayscale", m, {}) for i, m in inputs.items()}
    results: dict[int, object] = {}
    lock = threading.Lock()
    done = threading.Event()

    with UdfGateway() as gw:
        channel = gw.connect(udf_worker.port)

        def submit(i):
            def on_done(result, error):
                # callbacks run on the reader thread: record and get out
                with lock:
                    results[i] = (result, error)
                    if len(results) == len(inputs):
                        done.set()

            channel.submit(i, "udf_grayscale", {}, inputs[i], on_done)

        for i in inputs:
            threading.Thread(target=submit, args=(i,)).start()
        assert done.wait(timeout=30), f"only {len(results)}/{len(inputs)} replies"

    for i, m in inputs.items():
        result, error = results[i]
        assert error is None
        assert result == expected[i], f"reply {i} correlated to the wrong request"


def test_dead_port_fails_without_hanging(rng):
    with UdfGateway() as gw:
        result, error = dispatch_sync(gw, udf_op("udf_grayscale", 9), random_image(rng))
    assert result is None
    assert error.startswith("udf channel")


def test_worker_death_fails_pending_then_reconnects(rng):
    worker = MockUdfWorker(latency_s=0.5).start()
    port = worker.port
    media = random_image(rng)
    box = {}
    done = threading.Event()

    def on_done(result, error):
        box["r"], box["e"] = result, error
        done.set()

    with UdfGateway() as gw:
        gw.dispatch(1, udf_op("udf_grayscale", port), media, on_done)
        time.sleep(0.1)  # request is on the wire, response still half a second out
        worker.stop()
        assert done.wait(10), "pending request never failed"
        assert box["r"] is None
        assert box["e"].startswith("udf channel")

        # same port comes back: the channel reconnects on the next submit
        worker2 = MockUdfWorker(port=port).start()
        try:
            result, error = dispatch_sync(gw, udf_op("udf_grayscale", port), media)
            assert error is None
            assert result == execute_worker_op("grayscale", media, {})
        finally:
            worker2.stop()


def test_exactly_once_across_connection_drops(rng):
    # the worker hangs up after every reply; each submit still completes once
    worker = MockUdfWorker(drop_after=1).start()
    media = random_image(rng, 5, 5)
    counts = {i: 0 for i in range(6)}
    lock = threading.Lock()
    all_done = threading.Barrier(2)

    with UdfGateway() as gw:
        for i in range(6):
            done = threading.Event()

            def on_done(result, error, i=i, done=done):
                with lock:
                    counts[i] += 1
                done.set()

            gw.dispatch(i, udf_op("udf_grayscale", worker.port), media, on_done)
            assert done.wait(10)
    worker.stop()
    time.sleep(0.1)
    assert all(c == 1 for c in counts.values()), counts


def test_malformed_worker_response_fails_request(rng):
    # a worker that answers with unparseable bytes: the request errors out
    class Garbage(socketserver.StreamRequestHandler):
        def handle(self):
            read_frame(self.rfile)
            self.wfile.write(struct.pack(">I", 1 << 25))  # insane header length
            self.wfile.flush()

    srv = socketserver.ThreadingTCPServer(("127.0.0.1", 0), Garbage)
    srv.daemon_threads = True
    threading.Thread(target=srv.serve_forever, daemon=True).start()
    try:
        with UdfGateway() as gw:
            result, error = dispatch_sync(
                gw, udf_op("udf_grayscale", srv.server_address[1]), random_image(rng)
            )
        assert result is None
        assert error.startswith("udf channel")
    finally:
        srv.shutdown()
        srv.server_close()


def test_closed_gateway_rejects_new_work(rng, udf_worker):
    gw = UdfGateway()
    channel = gw.connect(udf_worker.port)
    gw.close()
    box = {}
    channel.submit(1, "udf_grayscale", {}, random_image(rng), lambda r, e: box.update(e=e))
    assert box["e"] == "udf channel closed"
