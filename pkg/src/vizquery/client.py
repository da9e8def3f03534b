"""Minimal blocking client for the query wire protocol."""

from __future__ import annotations

import socket
from typing import Any

from . import media_codec
from .model import MediaObject
from .wire import read_wire_frame, write_wire_frame


class QueryClient:
    def __init__(self, host: str, port: int, timeout_s: float | None = None):
        self._sock = socket.create_connection((host, port), timeout=timeout_s)
        self._rfile = self._sock.makefile("rb")
        self._wfile = self._sock.makefile("wb")

    def request(self, doc: dict[str, Any], blobs: list[bytes] | tuple[bytes, ...] = ()) -> tuple[dict[str, Any], list[bytes]]:
        write_wire_frame(self._wfile, doc, blobs)
        reply = read_wire_frame(self._rfile)
        if reply is None:
            raise ConnectionError("server closed the connection")
        return reply

    def add_image(self, metadata: dict[str, Any], blob: bytes) -> dict[str, Any]:
        doc, _ = self.request({"verb": "AddImage", "metadata": metadata}, [blob])
        return doc

    def add_video(self, metadata: dict[str, Any], blob: bytes) -> dict[str, Any]:
        doc, _ = self.request({"verb": "AddVideo", "metadata": metadata}, [blob])
        return doc

    def add_media(self, media: MediaObject, metadata: dict[str, Any]) -> dict[str, Any]:
        blob = media_codec.encode_media(media)
        if media.kind.value == "image":
            return self.add_image(metadata, blob)
        return self.add_video(metadata, blob)

    def close(self) -> None:
        try:
            self._rfile.close()
            self._wfile.close()
        finally:
            self._sock.close()

    def __enter__(self) -> "QueryClient":
        return self

    def __exit__(self, *exc: object) -> None:
        self.close()
