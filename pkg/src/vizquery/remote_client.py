"""Non-blocking HTTP dispatch to remote workers, with round-robin scale-out.

A dispatch never blocks the caller and never raises into it: the request runs
on a bounded I/O pool and the completion callback fires exactly once with
either the decoded result media or an error string. A query's single worker
url may also name a registered pool alias that fans out over several workers
round-robin.
"""

from __future__ import annotations

import http.client
import json
import logging
import threading
from concurrent.futures import ThreadPoolExecutor
from typing import Sequence
from urllib.parse import urlsplit

from . import media_codec
from .httpwire import encode_multipart
from .model import MediaObject, OperationSpec
from .pipeline import DispatchCallback

log = logging.getLogger(__name__)

DEFAULT_MAX_INFLIGHT = 64
DEFAULT_TIMEOUT_S = 300.0


class RemoteEndpointPool:
    """Round-robin over a fixed endpoint list; safe under concurrent pickers."""

    def __init__(self, endpoints: Sequence[str]):
        if not endpoints:
            raise ValueError("endpoint pool must be non-empty")
        self._endpoints = tuple(endpoints)
        self._cursor = 0
        self._lock = threading.Lock()

    def next_worker(self) -> str:
        with self._lock:
            endpoint = self._endpoints[self._cursor % len(self._endpoints)]
            self._cursor += 1
        return endpoint

    def __len__(self) -> int:
        return len(self._endpoints)


def build_request_body(op: OperationSpec, media: MediaObject) -> tuple[bytes, str]:
    args = {
        "type": op.type,
        "options": dict(op.options),
        "media": media_codec.media_descriptor(media),
    }
    return encode_multipart(
        [
            ("jsonArgs", None, "application/json", json.dumps(args).encode("utf-8")),
            ("mediaData", "media", media_codec.content_type_for(media), media_codec.encode_media(media)),
        ]
    )


def _error_from_response(status: int, body: bytes) -> str:
    try:
        message = json.loads(body.decode("utf-8")).get("error", "")
    except Exception:
        message = body[:200].decode("utf-8", "replace")
    return f"worker returned {status}: {message}"


class RemoteClient:
    def __init__(
        self,
        max_inflight: int = DEFAULT_MAX_INFLIGHT,
        timeout_s: float = DEFAULT_TIMEOUT_S,
        retries: int = 0,
    ):
        self.timeout_s = timeout_s
        self.retries = retries
        self._pools: dict[str, RemoteEndpointPool] = {}
        self._io = ThreadPoolExecutor(max_workers=max_inflight, thread_name_prefix="remote-io")
        self._local = threading.local()  # per-io-thread keep-alive connections

    def register_pool(self, alias: str, endpoints: Sequence[str]) -> None:
        """Make ``alias`` (used as an op url) fan out over ``endpoints``."""
        self._pools[alias] = RemoteEndpointPool(endpoints)

    def resolve(self, url: str) -> str:
        pool = self._pools.get(url)
        return pool.next_worker() if pool else url

    def dispatch(
        self, entity_id: int, op: OperationSpec, media: MediaObject, on_done: DispatchCallback
    ) -> None:
        self._io.submit(self._run_request, entity_id, op, media, on_done)

    def _run_request(
        self, entity_id: int, op: OperationSpec, media: MediaObject, on_done: DispatchCallback
    ) -> None:
        result: MediaObject | None = None
        error: str | None = None
        try:
            assert op.endpoint is not None
            body, content_type = build_request_body(op, media)
            attempts = 1 + max(0, self.retries)
            for attempt in range(attempts):
                # re-resolve per attempt so retries can land on another pool member
                endpoint = self.resolve(op.endpoint)
                result, error = self._post_once(endpoint, body, content_type)
                if error is None:
                    break
                log.debug("entity %d attempt %d failed: %s", entity_id, attempt + 1, error)
        except Exception as exc:
            result, error = None, f"transport: {exc}"
        try:
            on_done(result, error)
        except Exception:
            log.exception("completion callback failed for entity %d", entity_id)

    def _connection(self, scheme: str, netloc: str) -> tuple[http.client.HTTPConnection, bool]:
        """A cached keep-alive connection for this io thread; (conn, was_cached)."""
        cache = getattr(self._local, "conns", None)
        if cache is None:
            cache = self._local.conns = {}
        key = f"{scheme}://{netloc}"
        conn = cache.get(key)
        if conn is not None:
            return conn, True
        maker = http.client.HTTPSConnection if scheme == "https" else http.client.HTTPConnection
        conn = maker(netloc, timeout=self.timeout_s)
        cache[key] = conn
        return conn, False

    def _drop_connection(self, scheme: str, netloc: str) -> None:
        conn = getattr(self._local, "conns", {}).pop(f"{scheme}://{netloc}", None)
        if conn is not None:
            conn.close()

    def _post_once(self, endpoint: str, body: bytes, content_type: str) -> tuple[MediaObject | None, str | None]:
        parts = urlsplit(endpoint)
        path = parts.path or "/"
        retried_fresh = False
        while True:
            reused = False
            try:
                conn, reused = self._connection(parts.scheme, parts.netloc)
                conn.request("POST", path, body=body, headers={"Content-Type": content_type})
                response = conn.getresponse()
                payload = response.read()
                meta = response.getheader("X-Media-Meta")
                if response.will_close:
                    self._drop_connection(parts.scheme, parts.netloc)
            except Exception as exc:
                self._drop_connection(parts.scheme, parts.netloc)
                if reused and not retried_fresh:
                    # a cached socket can go stale between requests; ops are
                    # pure, so one fresh-connection resend cannot corrupt state
                    retried_fresh = True
                    continue
                return None, f"transport: {exc}"
            break
        if response.status != 200:
            return None, _error_from_response(response.status, payload)
        hints = None
        if meta:
            try:
                hints = media_codec.hints_from_descriptor(json.loads(meta)) or None
            except Exception:
                hints = None
        try:
            return media_codec.decode_media(payload, hints=hints), None
        except media_codec.MediaCodecError as exc:
            return None, f"undecodable worker response: {exc}"

    def close(self) -> None:
        self._io.shutdown(wait=False, cancel_futures=True)

    def __enter__(self) -> "RemoteClient":
        return self

    def __exit__(self, *exc: object) -> None:
        self.close()
