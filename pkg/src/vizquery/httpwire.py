"""Multipart/form-data framing for the worker HTTP protocol.

A request carries exactly two parts: ``jsonArgs`` (UTF-8 JSON describing the
operation and the media) and ``mediaData`` (the encoded media bytes). Parsing
runs on the stdlib email machinery, so odd-but-legal MIME from other clients
still parses.
"""

from __future__ import annotations

import email.parser
import email.policy
import uuid

CRLF = b"\r\n"


class MultipartError(ValueError):
    pass


def encode_multipart(parts: list[tuple[str, str | None, str, bytes]]) -> tuple[bytes, str]:
    """Build a multipart/form-data body.

    ``parts`` entries are (field name, filename or None, content type, payload).
    Returns (body, Content-Type header value).
    """
    boundary = "----vizquery-" + uuid.uuid4().hex
    chunks: list[bytes] = []
    for name, filename, content_type, payload in parts:
        disposition = f'form-data; name="{name}"'
        if filename:
            disposition += f'; filename="{filename}"'
        chunks.append(b"--" + boundary.encode("ascii") + CRLF)
        chunks.append(f"Content-Disposition: {disposition}".encode("ascii") + CRLF)
        chunks.append(f"Content-Type: {content_type}".encode("ascii") + CRLF)
        chunks.append(CRLF)
        chunks.append(payload)
        chunks.append(CRLF)
    chunks.append(b"--" + boundary.encode("ascii") + b"--" + CRLF)
    return b"".join(chunks), f"multipart/form-data; boundary={boundary}"


def parse_multipart(content_type: str | None, body: bytes) -> dict[str, tuple[str, bytes]]:
    """Split a multipart body into {field name: (content type, payload)}."""
    if not content_type or "multipart/form-data" not in content_type:
        raise MultipartError(f"expected multipart/form-data, got {content_type!r}")
    # wrap the body in a minimal MIME document so the email parser will take it
    header = f"Content-Type: {content_type}\r\nMIME-Version: 1.0\r\n\r\n".encode("ascii")
    message = email.parser.BytesParser(policy=email.policy.HTTP).parsebytes(header + body)
    if not message.is_multipart():
        raise MultipartError("body did not parse as multipart")
    fields: dict[str, tuple[str, bytes]] = {}
    for part in message.iter_parts():  # type: ignore[attr-defined]
        name = part.get_param("name", header="content-disposition")
        if not name:
            continue
        payload = part.get_payload(decode=True)
        if payload is None:
            payload = b""
        fields[str(name)] = (part.get_content_type(), bytes(payload))
    if not fields:
        raise MultipartError("no form-data fields found")
    return fields
