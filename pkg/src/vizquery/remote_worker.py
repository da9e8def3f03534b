"""Standalone HTTP worker executing offloaded operations.

POST any path with the multipart request format; the reply body is the
encoded result media with its JSON descriptor mirrored in ``X-Media-Meta``.
``--latency-ms`` injects a fixed pre-execution sleep and ``--max-concurrency``
bounds how many requests may compute at once — together they model a
compute-bound server with a deterministic service time, which the timing
benchmarks rely on. Connections are still accepted unboundedly; waiting
happens at the compute gate, not the socket.
"""

from __future__ import annotations

import argparse
import json
import logging
import threading
import time
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer

from . import media_codec
from .httpwire import MultipartError, parse_multipart
from .native_ops import OperationError
from .worker_ops import WORKER_REGISTRY

log = logging.getLogger(__name__)

DEFAULT_MAX_CONCURRENCY = 8


class _WorkerHTTPServer(ThreadingHTTPServer):
    daemon_threads = True
    request_queue_size = 128


class WorkerHandler(BaseHTTPRequestHandler):
    protocol_version = "HTTP/1.1"
    server: "_WorkerHTTPServer"

    # set per server instance in RemoteWorker
    latency_s: float = 0.0
    compute_gate: threading.Semaphore

    def log_message(self, format: str, *args: object) -> None:
        log.debug("%s %s", self.address_string(), format % args)

    def _send_json(self, status: int, doc: dict) -> None:
        payload = json.dumps(doc).encode("utf-8")
        self.send_response(status)
        self.send_header("Content-Type", "application/json")
        self.send_header("Content-Length", str(len(payload)))
        self.end_headers()
        self.wfile.write(payload)

    def do_GET(self) -> None:
        if self.path == "/healthz":
            body = b"ok"
            self.send_response(200)
            self.send_header("Content-Type", "text/plain")
            self.send_header("Content-Length", str(len(body)))
            self.end_headers()
            self.wfile.write(body)
        else:
            self._send_json(404, {"error": f"no such resource {self.path}"})

    def do_POST(self) -> None:
        try:
            length = int(self.headers.get("Content-Length", "0"))
            body = self.rfile.read(length)
            fields = parse_multipart(self.headers.get("Content-Type"), body)
            if "jsonArgs" not in fields or "mediaData" not in fields:
                raise MultipartError("need both jsonArgs and mediaData parts")
            args = json.loads(fields["jsonArgs"][1].decode("utf-8"))
            op_name = args.get("type")
            options = args.get("options", {})
            if not isinstance(op_name, str) or not isinstance(options, dict):
                raise MultipartError("jsonArgs must carry a type string and an options object")
            descriptor = args.get("media", {})
            hints = media_codec.hints_from_descriptor(descriptor) if isinstance(descriptor, dict) else {}
            media = media_codec.decode_media(fields["mediaData"][1], hints=hints or None)
        except (MultipartError, media_codec.MediaCodecError, ValueError) as exc:
            self._send_json(400, {"error": f"bad request: {exc}"})
            return

        fn = WORKER_REGISTRY.get(op_name)
        if fn is None:
            self._send_json(404, {"error": f"unknown operation {op_name!r}"})
            return

        try:
            with self.compute_gate:
                if self.latency_s > 0:
                    time.sleep(self.latency_s)
                result = fn(media, options)
        except OperationError as exc:
            self._send_json(422, {"error": str(exc)})
            return
        except Exception as exc:
            log.exception("operation %s blew up", op_name)
            self._send_json(500, {"error": f"internal failure: {exc}"})
            return

        payload = media_codec.encode_media(result)
        self.send_response(200)
        self.send_header("Content-Type", media_codec.content_type_for(result))
        self.send_header("X-Media-Meta", json.dumps(media_codec.media_descriptor(result)))
        self.send_header("Content-Length", str(len(payload)))
        self.end_headers()
        self.wfile.write(payload)


class RemoteWorker:
    """Embeddable worker service; also the target of the console entry point."""

    def __init__(
        self,
        host: str = "127.0.0.1",
        port: int = 0,
        latency_ms: float = 0.0,
        max_concurrency: int = DEFAULT_MAX_CONCURRENCY,
    ):
        if max_concurrency < 1:
            raise ValueError("max_concurrency must be at least 1")
        handler = type(
            "BoundWorkerHandler",
            (WorkerHandler,),
            {
                "latency_s": latency_ms / 1000.0,
                "compute_gate": threading.Semaphore(max_concurrency),
            },
        )
        self._server = _WorkerHTTPServer((host, port), handler)
        self._thread: threading.Thread | None = None

    @property
    def port(self) -> int:
        return self._server.server_address[1]

    @property
    def url(self) -> str:
        host = self._server.server_address[0]
        return f"http://{host}:{self.port}/"

    def start(self) -> "RemoteWorker":
        self._thread = threading.Thread(target=self._server.serve_forever, name="remote-worker", daemon=True)
        self._thread.start()
        return self

    def stop(self) -> None:
        self._server.shutdown()
        if self._thread:
            self._thread.join()
        self._server.server_close()

    def serve_forever(self) -> None:
        self._server.serve_forever()

    def __enter__(self) -> "RemoteWorker":
        return self.start()

    def __exit__(self, *exc: object) -> None:
        self.stop()


def main(argv: list[str] | None = None) -> None:
    parser = argparse.ArgumentParser(description="operation worker HTTP service")
    parser.add_argument("--host", default="127.0.0.1")
    parser.add_argument("--port", type=int, default=8800)
    parser.add_argument("--latency-ms", type=float, default=0.0, help="fixed sleep before each execution")
    parser.add_argument(
        "--max-concurrency",
        type=int,
        default=DEFAULT_MAX_CONCURRENCY,
        help="requests allowed to compute simultaneously",
    )
    parser.add_argument("--log-level", default="info")
    args = parser.parse_args(argv)
    logging.basicConfig(level=args.log_level.upper(), format="%(asctime)s %(name)s %(levelname)s %(message)s")

    worker = RemoteWorker(args.host, args.port, args.latency_ms, args.max_concurrency)
    log.info("worker listening on %s (latency %.0f ms, concurrency %d)", worker.url, args.latency_ms, args.max_concurrency)
    try:
        worker.serve_forever()
    except KeyboardInterrupt:
        pass


if __name__ == "__main__":
    main()
