"""TCP query front end: frames in, store + pipeline, frames out.

Each connection gets its own handler thread and processes queries one at a
time; every Find spawns a fresh pipeline actor pair, so concurrent
connections only share the store, the remote client, and the UDF gateway —
all of which are concurrency-safe. Replies are deterministic: canonical JSON,
results ordered by entity id, blobs for ok entities in the same order.

A remote op may target ``pool://<name>``: the alias fans out round-robin over
the worker URLs configured for that pool.
"""

from __future__ import annotations

import argparse
import configparser
import logging
import os
import socketserver
import threading
from dataclasses import dataclass, field
from typing import Any

from . import media_codec
from .model import (
    ConstraintTypeError,
    ExecClass,
    Query,
    QueryValidationError,
    validate_query,
)
from .pipeline import Executors, Mode, Pipeline, run_sync_baseline
from .remote_client import DEFAULT_MAX_INFLIGHT, DEFAULT_TIMEOUT_S, RemoteClient
from .store import MediaStore, StoreKindError
from .udf_gateway import UdfGateway
from .wire import WireError, read_wire_frame, write_wire_frame

log = logging.getLogger(__name__)

DEFAULT_PORT = 55555
POOL_PREFIX = "pool://"


@dataclass
class ServerConfig:
    host: str = "127.0.0.1"
    port: int = DEFAULT_PORT
    mode: Mode = Mode.ASYNC
    pools: dict[str, list[str]] = field(default_factory=dict)
    max_inflight: int = DEFAULT_MAX_INFLIGHT
    timeout_s: float = DEFAULT_TIMEOUT_S
    retries: int = 0
    udf_host: str = "127.0.0.1"

    def __post_init__(self) -> None:
        for name, urls in self.pools.items():
            if not urls:
                raise ValueError(f"pool {name!r} must list at least one worker url")

    @classmethod
    def from_file(cls, path: str) -> "ServerConfig":
        parser = configparser.ConfigParser()
        with open(path) as fh:
            parser.read_file(fh)
        kwargs: dict[str, Any] = {}
        if parser.has_section("server"):
            section = parser["server"]
            if "host" in section:
                kwargs["host"] = section["host"]
            if "port" in section:
                kwargs["port"] = section.getint("port")
            if "mode" in section:
                kwargs["mode"] = Mode(section["mode"])
            if "max_inflight" in section:
                kwargs["max_inflight"] = section.getint("max_inflight")
            if "timeout_s" in section:
                kwargs["timeout_s"] = section.getfloat("timeout_s")
            if "retries" in section:
                kwargs["retries"] = section.getint("retries")
            if "udf_host" in section:
                kwargs["udf_host"] = section["udf_host"]
        if parser.has_section("pools"):
            kwargs["pools"] = {
                name: [url.strip() for url in value.split(",") if url.strip()]
                for name, value in parser["pools"].items()
            }
        return cls(**kwargs)

    def apply_env(self) -> "ServerConfig":
        self.host = os.environ.get("VIZQUERY_HOST", self.host)
        port = os.environ.get("VIZQUERY_PORT")
        if port:
            self.port = int(port)
        mode = os.environ.get("VIZQUERY_MODE")
        if mode:
            self.mode = Mode(mode)
        return self


class QueryEngine:
    """Validated query in, reply document + blobs out; shared across connections."""

    def __init__(
        self,
        store: MediaStore,
        remote_client: RemoteClient,
        udf_gateway: UdfGateway,
        mode: Mode = Mode.ASYNC,
        pool_names: set[str] | None = None,
    ):
        self.store = store
        self.mode = mode
        self.executors = Executors(remote=remote_client, udf=udf_gateway)
        self.pool_names = pool_names or set()
        self._active = 0
        self._active_lock = threading.Lock()

    @property
    def active_queries(self) -> int:
        with self._active_lock:
            return self._active

    def _check_pools(self, query: Query) -> str | None:
        for op in query.operations:
            if op.exec_class is ExecClass.REMOTE and op.endpoint and op.endpoint.startswith(POOL_PREFIX):
                name = op.endpoint[len(POOL_PREFIX) :]
                if name not in self.pool_names:
                    return f"unknown worker pool {name!r}"
        return None

    def execute(self, query: Query, blobs: list[bytes], mode: Mode | None = None) -> tuple[dict[str, Any], list[bytes]]:
        with self._active_lock:
            self._active += 1
        try:
            return self._execute(query, blobs, mode or self.mode)
        finally:
            with self._active_lock:
                self._active -= 1

    def _execute(self, query: Query, blobs: list[bytes], mode: Mode) -> tuple[dict[str, Any], list[bytes]]:
        if query.verb.is_add:
            try:
                entity_id = self.store.add_entity(query.verb.media_kind, query.metadata, blobs[0])
            except (media_codec.MediaCodecError, StoreKindError) as exc:
                return {"status": "error", "error": f"add failed: {exc}"}, []
            return {"status": "ok", "id": entity_id}, []

        pool_error = self._check_pools(query)
        if pool_error is not None:
            return {"status": "error", "error": pool_error}, []
        try:
            entity_ids = self.store.filter(query.verb.media_kind, query.constraints)
        except ConstraintTypeError as exc:
            return {"status": "error", "error": f"constraint: {exc}"}, []

        if mode is Mode.SYNC:
            erd = run_sync_baseline(entity_ids, query.operations, self.executors, self.store.get_media)
        else:
            erd = Pipeline(query.operations, self.executors).run(entity_ids, self.store.get_media)

        snapshot = erd.snapshot()
        results = []
        out_blobs: list[bytes] = []
        for entity_id in sorted(snapshot):
            entry = snapshot[entity_id]
            doc: dict[str, Any] = {"id": entity_id, "status": entry.status.value, "ops_done": entry.ops_done}
            if entry.error is not None:
                doc["error"] = entry.error
            results.append(doc)
            if entry.status.value == "ok" and entry.media is not None:
                out_blobs.append(media_codec.encode_media(entry.media))
        return {"status": "ok", "results": results}, out_blobs


class _QueryTCPServer(socketserver.ThreadingTCPServer):
    allow_reuse_address = True
    daemon_threads = True
    request_queue_size = 256


class _ConnectionHandler(socketserver.StreamRequestHandler):
    server: "_QueryTCPServer"
    engine: QueryEngine  # bound per server instance

    def handle(self) -> None:
        while True:
            try:
                frame = read_wire_frame(self.rfile)
            except WireError as exc:
                log.debug("bad frame from %s: %s", self.client_address, exc)
                self._reply({"status": "error", "error": f"bad frame: {exc}"}, [])
                return
            if frame is None:
                return
            doc, blobs = frame
            try:
                query = validate_query(doc)
            except QueryValidationError as exc:
                self._reply({"status": "error", "error": "validation failed", "violations": exc.violations}, [])
                continue
            try:
                reply_doc, reply_blobs = self.engine.execute(query, blobs)
            except Exception as exc:
                log.exception("query execution blew up")
                reply_doc, reply_blobs = {"status": "error", "error": f"internal: {exc}"}, []
            try:
                self._reply(reply_doc, reply_blobs)
            except OSError:
                return  # client went away; pipeline already wound down

    def _reply(self, doc: dict[str, Any], blobs: list[bytes]) -> None:
        write_wire_frame(self.wfile, doc, blobs)


class QueryServer:
    """Embeddable server; also the target of the console entry point."""

    def __init__(self, config: ServerConfig | None = None, store: MediaStore | None = None):
        self.config = config or ServerConfig()
        self.store = store or MediaStore()
        self.remote_client = RemoteClient(
            max_inflight=self.config.max_inflight,
            timeout_s=self.config.timeout_s,
            retries=self.config.retries,
        )
        for name, urls in self.config.pools.items():
            self.remote_client.register_pool(POOL_PREFIX + name, urls)
        self.udf_gateway = UdfGateway(self.config.udf_host)
        self.engine = QueryEngine(
            self.store,
            self.remote_client,
            self.udf_gateway,
            mode=self.config.mode,
            pool_names=set(self.config.pools),
        )
        handler = type("BoundConnectionHandler", (_ConnectionHandler,), {"engine": self.engine})
        self._server = _QueryTCPServer((self.config.host, self.config.port), handler)
        self._thread: threading.Thread | None = None

    @property
    def port(self) -> int:
        return self._server.server_address[1]

    @property
    def host(self) -> str:
        return self._server.server_address[0]

    def start(self) -> "QueryServer":
        self._thread = threading.Thread(target=self._server.serve_forever, name="query-server", daemon=True)
        self._thread.start()
        return self

    def stop(self) -> None:
        self._server.shutdown()
        if self._thread:
            self._thread.join()
        self._server.server_close()
        self.remote_client.close()
        self.udf_gateway.close()

    def serve_forever(self) -> None:
        self._server.serve_forever()

    def __enter__(self) -> "QueryServer":
        return self.start()

    def __exit__(self, *exc: object) -> None:
        self.stop()


def _parse_pool_flag(values: list[str]) -> dict[str, list[str]]:
    pools: dict[str, list[str]] = {}
    for value in values:
        name, _, urls = value.partition("=")
        if not name or not urls:
            raise SystemExit(f"--pool expects name=url[,url...], got {value!r}")
        pools[name] = [u.strip() for u in urls.split(",") if u.strip()]
    return pools


def main(argv: list[str] | None = None) -> None:
    parser = argparse.ArgumentParser(description="visual data query server")
    parser.add_argument("--config", help="config file (ini: [server] and [pools] sections)")
    parser.add_argument("--host")
    parser.add_argument("--port", type=int)
    parser.add_argument("--mode", choices=[m.value for m in Mode])
    parser.add_argument("--pool", action="append", default=[], metavar="NAME=URL[,URL...]")
    parser.add_argument("--max-inflight", type=int)
    parser.add_argument("--timeout-s", type=float)
    parser.add_argument("--retries", type=int)
    parser.add_argument("--log-level", default="info")
    args = parser.parse_args(argv)
    logging.basicConfig(level=args.log_level.upper(), format="%(asctime)s %(name)s %(levelname)s %(message)s")

    config = ServerConfig.from_file(args.config) if args.config else ServerConfig()
    config.apply_env()
    if args.host:
        config.host = args.host
    if args.port is not None:
        config.port = args.port
    if args.mode:
        config.mode = Mode(args.mode)
    if args.pool:
        config.pools.update(_parse_pool_flag(args.pool))
    if args.max_inflight is not None:
        config.max_inflight = args.max_inflight
    if args.timeout_s is not None:
        config.timeout_s = args.timeout_s
    if args.retries is not None:
        config.retries = args.retries

    server = QueryServer(config)
    log.info("serving on %s:%d (mode %s)", server.host, server.port, config.mode.value)
    try:
        server.serve_forever()
    except KeyboardInterrupt:
        pass


if __name__ == "__main__":
    main()
