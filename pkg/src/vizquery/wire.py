"""Client/server frame format.

One frame is: u32 big-endian JSON length, the UTF-8 JSON document, then one
length-prefixed binary blob per ``blob_count`` declared inside that JSON.
Replies use canonical JSON (sorted keys, no whitespace) so equal results are
equal bytes.
"""

from __future__ import annotations

import json
import struct
from typing import Any, BinaryIO

_U32 = struct.Struct(">I")
MAX_JSON_BYTES = 1 << 26
MAX_BLOB_BYTES = 1 << 28


class WireError(ValueError):
    pass


def canonical_json(doc: dict[str, Any]) -> bytes:
    return json.dumps(doc, sort_keys=True, separators=(",", ":")).encode("utf-8")


def write_wire_frame(stream: BinaryIO, doc: dict[str, Any], blobs: list[bytes] | tuple[bytes, ...] = ()) -> None:
    doc = dict(doc)
    doc["blob_count"] = len(blobs)
    payload = canonical_json(doc)
    parts = [_U32.pack(len(payload)), payload]
    for blob in blobs:
        parts.append(_U32.pack(len(blob)))
        parts.append(blob)
    stream.write(b"".join(parts))
    stream.flush()


def _read_exact(stream: BinaryIO, n: int) -> bytes | None:
    data = stream.read(n)
    if data is None or len(data) < n:
        return None
    return data


def read_wire_frame(stream: BinaryIO) -> tuple[dict[str, Any], list[bytes]] | None:
    """One frame, or None on clean EOF before any byte of a new frame."""
    prefix = _read_exact(stream, 4)
    if prefix is None:
        return None
    (json_len,) = _U32.unpack(prefix)
    if json_len > MAX_JSON_BYTES:
        raise WireError(f"json length {json_len} exceeds cap")
    payload = _read_exact(stream, json_len)
    if payload is None:
        raise WireError("stream ended inside json")
    try:
        doc = json.loads(payload.decode("utf-8"))
    except ValueError as exc:
        raise WireError(f"frame json does not parse: {exc}") from exc
    if not isinstance(doc, dict):
        raise WireError("frame json must be an object")
    blob_count = doc.get("blob_count", 0)
    if not isinstance(blob_count, int) or isinstance(blob_count, bool) or blob_count < 0:
        raise WireError(f"bad blob_count {blob_count!r}")
    blobs: list[bytes] = []
    for _ in range(blob_count):
        prefix = _read_exact(stream, 4)
        if prefix is None:
            raise WireError("stream ended before a declared blob")
        (blob_len,) = _U32.unpack(prefix)
        if blob_len > MAX_BLOB_BYTES:
            raise WireError(f"blob length {blob_len} exceeds cap")
        blob = _read_exact(stream, blob_len)
        if blob is None:
            raise WireError("stream ended inside a blob")
        blobs.append(blob)
    return doc, blobs
