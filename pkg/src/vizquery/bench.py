"""Load generator and measurement CLI.

Subcommands:

* ``gen-dataset`` — write a synthetic media directory + manifest (random
  images carrying one bright blob so detection ops have something to find,
  and short videos tagged with an activity).
* ``seed`` — add a manifest's entities to a running server.
* ``query`` — send one query file, save returned blobs.
* ``bench`` — timing runs. Self-hosts server(s) and worker(s) in-process by
  default so sync/async and worker-count sweeps share one seeded store;
  ``--server`` points at an external pre-seeded server instead.

Timing rows land in a CSV with columns
{category, query_id, mode, clients, workers, run_index, duration_s,
entities, throughput}. ``entities`` is the unit count behind the throughput
figure: ok entities for image queries, returned frames for video queries, so
throughput is always entities/duration_s.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import pathlib
import struct
import sys
import threading
import time
from dataclasses import dataclass
from typing import Any, Callable, Sequence

import numpy as np

from . import media_codec
from .client import QueryClient
from .model import MediaKind, MediaObject
from .native_ops import from_array
from .pipeline import Mode
from .remote_worker import RemoteWorker
from .server import QueryServer, ServerConfig
from .store import MediaStore

log = logging.getLogger(__name__)

DEFAULT_SEED = 7
DEFAULT_IMAGE_SIZE = (96, 64)  # (width, height)
DEFAULT_VIDEO_SIZE = (64, 48)
DEFAULT_VIDEO_FRAMES = 8
DEFAULT_VIDEO_FPS = 4
ACTIVITIES = ("running", "walking", "jumping", "sitting")


# -- synthetic media ---------------------------------------------------------


def synth_image(
    rng: np.random.Generator,
    width: int = DEFAULT_IMAGE_SIZE[0],
    height: int = DEFAULT_IMAGE_SIZE[1],
    channels: int = 3,
    blob: bool = True,
) -> MediaObject:
    """Random dark image, optionally with one bright rectangle for detect ops."""
    arr = rng.integers(0, 100, (height, width, channels), dtype=np.uint8)
    if blob:
        bw = int(rng.integers(4, max(5, width // 3)))
        bh = int(rng.integers(4, max(5, height // 3)))
        bx = int(rng.integers(0, width - bw))
        by = int(rng.integers(0, height - bh))
        arr[by : by + bh, bx : bx + bw] = rng.integers(210, 256, (bh, bw, channels), dtype=np.uint8)
    return MediaObject.image(from_array(arr))


def synth_video(
    rng: np.random.Generator,
    width: int = DEFAULT_VIDEO_SIZE[0],
    height: int = DEFAULT_VIDEO_SIZE[1],
    frame_count: int = DEFAULT_VIDEO_FRAMES,
    fps: int = DEFAULT_VIDEO_FPS,
    channels: int = 3,
    blob: bool = True,
) -> MediaObject:
    """Random video; a bright blob drifts one pixel per frame when enabled."""
    bw = int(rng.integers(4, max(5, width // 3)))
    bh = int(rng.integers(4, max(5, height // 3)))
    bx = int(rng.integers(0, width - bw - frame_count)) if width - bw - frame_count > 0 else 0
    by = int(rng.integers(0, height - bh))
    frames = []
    for i in range(frame_count):
        arr = rng.integers(0, 100, (height, width, channels), dtype=np.uint8)
        if blob:
            x = min(bx + i, width - bw)
            arr[by : by + bh, x : x + bw] = rng.integers(210, 256, (bh, bw, channels), dtype=np.uint8)
        frames.append(from_array(arr))
    return MediaObject.video(frames, fps=fps)


def seed_store(
    store: MediaStore,
    images: int,
    videos: int = 0,
    seed: int = DEFAULT_SEED,
    image_size: tuple[int, int] = DEFAULT_IMAGE_SIZE,
) -> tuple[list[int], list[int]]:
    """Populate an in-process store; returns (image ids, video ids)."""
    rng = np.random.default_rng(seed)
    image_ids = []
    for i in range(images):
        media = synth_image(rng, image_size[0], image_size[1])
        metadata = {"name": f"img_{i:05d}", "category": "synthetic"}
        image_ids.append(store.add_entity(MediaKind.IMAGE, metadata, media_codec.encode_media(media)))
    video_ids = []
    for i in range(videos):
        media = synth_video(rng)
        metadata = {
            "name": f"vid_{i:05d}",
            "category": "activity",
            "activity": ACTIVITIES[i % len(ACTIVITIES)],
        }
        video_ids.append(store.add_entity(MediaKind.VIDEO, metadata, media_codec.encode_media(media)))
    return image_ids, video_ids


# -- query templates ---------------------------------------------------------


@dataclass(frozen=True)
class QueryTemplate:
    query_id: str
    kind: MediaKind
    needs_worker: bool
    ops: Callable[[str | None], list[dict[str, Any]]]


def _remote(op_type: str, worker: str | None, options: dict[str, Any] | None = None) -> dict[str, Any]:
    if worker is None:
        raise SystemExit(f"template uses remote op {op_type!r}: pass --worker-url")
    doc: dict[str, Any] = {"type": op_type, "url": worker}
    if options:
        doc["options"] = options
    return doc


def _native(op_type: str, options: dict[str, Any] | None = None) -> dict[str, Any]:
    doc: dict[str, Any] = {"type": op_type}
    if options:
        doc["options"] = options
    return doc


TEMPLATES: dict[str, QueryTemplate] = {
    t.query_id: t
    for t in [
        QueryTemplate("iq1", MediaKind.IMAGE, False, lambda w: [_native("crop", {"x": 10, "y": 10, "width": 40, "height": 30})]),
        QueryTemplate("iq2", MediaKind.IMAGE, False, lambda w: [_native("grayscale")]),
        QueryTemplate("iq3", MediaKind.IMAGE, True, lambda w: [_remote("gaussianblur", w, {"kernel_w": 5, "kernel_h": 5})]),
        QueryTemplate("iq4", MediaKind.IMAGE, True, lambda w: [_remote("facedetect_box", w)]),
        QueryTemplate("iq5", MediaKind.IMAGE, True, lambda w: [_remote("facedetect_mask", w, {"radius": 6})]),
        QueryTemplate("iq6", MediaKind.IMAGE, True, lambda w: [_remote("upsample", w, {"X": 1.5, "Y": 1.5})]),
        QueryTemplate("iq7", MediaKind.IMAGE, True, lambda w: [_remote("downsample", w, {"X": 2, "Y": 2})]),
        QueryTemplate("iq8", MediaKind.IMAGE, True, lambda w: [_remote("caption", w, {"text": "hello", "x": 2, "y": 2})]),
        QueryTemplate("iq9", MediaKind.IMAGE, True, lambda w: [_remote("manipulation", w, {"radius": 10})]),
        QueryTemplate("vq1", MediaKind.VIDEO, True, lambda w: [_remote("select", w, {"t1": 0.25, "t2": 1.25, "x": 4, "y": 4, "width": 32, "height": 24})]),
        QueryTemplate("vq2", MediaKind.VIDEO, False, lambda w: [_native("grayscale")]),
        QueryTemplate("vq3", MediaKind.VIDEO, True, lambda w: [_remote("gaussianblur", w, {"kernel_w": 5, "kernel_h": 5})]),
        QueryTemplate("vq4", MediaKind.VIDEO, True, lambda w: [_remote("facedetect_box", w)]),
        QueryTemplate("vq5", MediaKind.VIDEO, True, lambda w: [_remote("facedetect_mask", w, {"radius": 6})]),
        QueryTemplate("vq6", MediaKind.VIDEO, True, lambda w: [_remote("upsample", w, {"X": 1.5, "Y": 1.5})]),
        QueryTemplate("vq7", MediaKind.VIDEO, True, lambda w: [_remote("downsample", w, {"X": 2, "Y": 2})]),
        QueryTemplate("vq8", MediaKind.VIDEO, True, lambda w: [_remote("activity_label", w)]),
        QueryTemplate("vq9", MediaKind.VIDEO, True, lambda w: [_remote("manipulation", w, {"radius": 8})]),
        QueryTemplate(
            "c2-image",
            MediaKind.IMAGE,
            True,
            lambda w: [
                _native("resize", {"width": 64, "height": 48}),
                _remote("facedetect_box", w),
                _remote("manipulation", w, {"radius": 10}),
                _native("rotate", {"degrees": 90}),
            ],
        ),
        QueryTemplate(
            "c2-video",
            MediaKind.VIDEO,
            True,
            lambda w: [
                _remote("activity_label", w),
                _native("resize", {"width": 48, "height": 36}),
                _remote("select", w, {"t1": 0.25, "t2": 1.25, "x": 4, "y": 4, "width": 32, "height": 24}),
                _remote("manipulation", w, {"radius": 8}),
            ],
        ),
    ]
}


def build_find_query(template: QueryTemplate, worker: str | None) -> dict[str, Any]:
    if template.kind is MediaKind.IMAGE:
        return {
            "verb": "FindImage",
            "constraints": {"category": ["==", "synthetic"]},
            "operations": template.ops(worker),
            "blob_count": 0,
        }
    return {
        "verb": "FindVideo",
        "constraints": {"category": ["==", "activity"]},
        "operations": template.ops(worker),
        "blob_count": 0,
    }


# -- measurement -------------------------------------------------------------

_RVID_COUNT_OFFSET = 4 + 4 * 3  # magic + width/height/channels


def _unit_count(kind: MediaKind, reply: dict[str, Any], blobs: list[bytes]) -> int:
    if kind is MediaKind.IMAGE:
        return sum(1 for r in reply.get("results", []) if r.get("status") == "ok")
    total = 0
    for blob in blobs:
        (frames,) = struct.unpack_from(">I", blob, _RVID_COUNT_OFFSET)
        total += frames
    return total


class BenchError(SystemExit):
    pass


def _check_reply(reply: dict[str, Any]) -> None:
    if reply.get("status") != "ok":
        raise BenchError(f"query failed: {reply}")
    failed = [r for r in reply.get("results", []) if r.get("status") != "ok"]
    if failed:
        raise BenchError(f"{len(failed)} entities failed; first: {failed[0]} — timing run invalid")


@dataclass
class RunRow:
    category: str
    query_id: str
    mode: str
    clients: int
    workers: int
    run_index: int
    duration_s: float
    entities: int

    @property
    def throughput(self) -> float:
        return self.entities / self.duration_s if self.duration_s > 0 else 0.0


def _timed_query(
    host: str, port: int, query: dict[str, Any], kind: MediaKind
) -> tuple[float, int]:
    with QueryClient(host, port) as client:
        t0 = time.perf_counter()
        reply, blobs = client.request(query)
        duration = time.perf_counter() - t0
    _check_reply(reply)
    return duration, _unit_count(kind, reply, blobs)


def _concurrent_queries(
    host: str, port: int, query: dict[str, Any], kind: MediaKind, clients: int
) -> tuple[float, int]:
    """All clients fire the identical query at once; duration is to the last reply."""
    barrier = threading.Barrier(clients + 1)
    units = [0] * clients
    errors: list[BaseException] = []

    def worker(slot: int) -> None:
        try:
            with QueryClient(host, port) as client:
                barrier.wait()
                reply, blobs = client.request(query)
            _check_reply(reply)
            units[slot] = _unit_count(kind, reply, blobs)
        except BaseException as exc:
            errors.append(exc)

    threads = [threading.Thread(target=worker, args=(i,), daemon=True) for i in range(clients)]
    for t in threads:
        t.start()
    barrier.wait()
    t0 = time.perf_counter()
    for t in threads:
        t.join()
    duration = time.perf_counter() - t0
    if errors:
        raise BenchError(f"{len(errors)} clients failed; first: {errors[0]}")
    return duration, sum(units)


def write_csv(path: str, rows: Sequence[RunRow]) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(
            ["category", "query_id", "mode", "clients", "workers", "run_index", "duration_s", "entities", "throughput"]
        )
        for r in rows:
            writer.writerow(
                [r.category, r.query_id, r.mode, r.clients, r.workers, r.run_index, f"{r.duration_s:.6f}", r.entities, f"{r.throughput:.6f}"]
            )


# -- self-hosted bench harness ----------------------------------------------


class SelfHostedRig:
    """Workers + per-mode servers over one shared seeded store."""

    def __init__(
        self,
        modes: Sequence[Mode],
        worker_count: int,
        latency_ms: float,
        entities: int,
        kind: MediaKind,
        seed: int = DEFAULT_SEED,
        max_inflight: int = 256,
        image_size: tuple[int, int] = DEFAULT_IMAGE_SIZE,
    ):
        self.workers = [RemoteWorker(latency_ms=latency_ms).start() for _ in range(worker_count)]
        pool = {"bench": [w.url for w in self.workers]}
        self.store = MediaStore()
        if kind is MediaKind.IMAGE:
            seed_store(self.store, images=entities, videos=0, seed=seed, image_size=image_size)
        else:
            seed_store(self.store, images=0, videos=entities, seed=seed)
        self.servers: dict[Mode, QueryServer] = {}
        for mode in modes:
            config = ServerConfig(port=0, mode=mode, pools=pool, max_inflight=max_inflight)
            self.servers[mode] = QueryServer(config, store=self.store).start()

    @property
    def worker_url(self) -> str:
        return "pool://bench"

    def address(self, mode: Mode) -> tuple[str, int]:
        server = self.servers[mode]
        return server.host, server.port

    def close(self) -> None:
        for server in self.servers.values():
            server.stop()
        for worker in self.workers:
            worker.stop()

    def __enter__(self) -> "SelfHostedRig":
        return self

    def __exit__(self, *exc: object) -> None:
        self.close()


def run_category_bench(args: argparse.Namespace) -> list[RunRow]:
    template = TEMPLATES[args.query_id]
    rows: list[RunRow] = []

    if args.server:
        host, _, port = args.server.partition(":")
        query = build_find_query(template, args.worker_url)
        for run in range(args.runs):
            if args.category == "c3":
                duration, units = _concurrent_queries(host, int(port), query, template.kind, args.clients)
            else:
                duration, units = _timed_query(host, int(port), query, template.kind)
            rows.append(RunRow(args.category, template.query_id, args.mode, args.clients, 0, run, duration, units))
        return rows

    modes = [Mode.ASYNC, Mode.SYNC] if args.mode == "both" else [Mode(args.mode)]
    if args.category == "scaleout":
        worker_counts = [int(k) for k in args.workers.split(",")]
        per_kappa_means: dict[int, float] = {}
        for kappa in worker_counts:
            with SelfHostedRig([Mode.ASYNC], kappa, args.latency_ms, args.entities, template.kind, seed=args.seed) as rig:
                query = build_find_query(template, rig.worker_url)
                host, port = rig.address(Mode.ASYNC)
                durations = []
                for run in range(args.runs):
                    duration, units = _timed_query(host, port, query, template.kind)
                    durations.append(duration)
                    rows.append(RunRow("scaleout", template.query_id, "async", 1, kappa, run, duration, units))
                per_kappa_means[kappa] = sum(durations) / len(durations)
        base = per_kappa_means[worker_counts[0]]
        for kappa, mean in per_kappa_means.items():
            print(f"scaleout workers={kappa}: mean {mean:.3f}s  T({worker_counts[0]})/T({kappa}) = {base / mean:.2f}")
        return rows

    clients = args.clients if args.category == "c3" else 1
    with SelfHostedRig(modes, args.workers_per_mode, args.latency_ms, args.entities, template.kind, seed=args.seed) as rig:
        query = build_find_query(template, rig.worker_url)
        for mode in modes:
            host, port = rig.address(mode)
            for run in range(args.runs):
                if clients > 1:
                    duration, units = _concurrent_queries(host, port, query, template.kind, clients)
                else:
                    duration, units = _timed_query(host, port, query, template.kind)
                rows.append(RunRow(args.category, template.query_id, mode.value, clients, len(rig.workers), run, duration, units))
    by_mode: dict[str, list[float]] = {}
    for r in rows:
        by_mode.setdefault(r.mode, []).append(r.duration_s)
    for mode_name, durations in by_mode.items():
        print(f"{args.category} {template.query_id} mode={mode_name}: mean {sum(durations)/len(durations):.3f}s over {len(durations)} runs")
    if len(by_mode) == 2:
        speedup = (sum(by_mode["sync"]) / len(by_mode["sync"])) / (sum(by_mode["async"]) / len(by_mode["async"]))
        print(f"speedup mean_sync/mean_async = {speedup:.2f}")
    return rows


# -- dataset + manifest subcommands ------------------------------------------


def cmd_gen_dataset(args: argparse.Namespace) -> None:
    out = pathlib.Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(args.seed)
    manifest: list[dict[str, Any]] = []
    for i in range(args.images):
        media = synth_image(rng, args.width, args.height, blob=not args.no_blob)
        name = f"img_{i:05d}.png"
        (out / name).write_bytes(media_codec.encode_media(media))
        manifest.append({"path": name, "kind": "image", "metadata": {"name": f"img_{i:05d}", "category": "synthetic"}})
    for i in range(args.videos):
        media = synth_video(rng, blob=not args.no_blob)
        name = f"vid_{i:05d}.rvid"
        (out / name).write_bytes(media_codec.encode_media(media))
        manifest.append(
            {
                "path": name,
                "kind": "video",
                "metadata": {"name": f"vid_{i:05d}", "category": "activity", "activity": ACTIVITIES[i % len(ACTIVITIES)]},
            }
        )
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2))
    print(f"wrote {args.images} images, {args.videos} videos to {out}")


def cmd_seed(args: argparse.Namespace) -> None:
    host, _, port = args.server.partition(":")
    manifest_path = pathlib.Path(args.manifest)
    base = manifest_path.parent
    entries = json.loads(manifest_path.read_text())
    added = 0
    failures = 0
    with QueryClient(host, int(port)) as client:
        for entry in entries:
            blob = (base / entry["path"]).read_bytes()
            verb = "AddImage" if entry["kind"] == "image" else "AddVideo"
            reply, _ = client.request({"verb": verb, "metadata": entry["metadata"]}, [blob])
            if reply.get("status") == "ok":
                added += 1
            else:
                failures += 1
                print(f"  {entry['path']}: {reply.get('error')}", file=sys.stderr)
    print(f"added {added} entities" + (f", {failures} failed" if failures else ""))


def cmd_query(args: argparse.Namespace) -> None:
    host, _, port = args.server.partition(":")
    query = json.loads(pathlib.Path(args.file).read_text())
    out = pathlib.Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    with QueryClient(host, int(port)) as client:
        reply, blobs = client.request(query)
    print(json.dumps(reply, indent=2))
    if reply.get("status") != "ok":
        raise SystemExit(1)
    ok_ids = [r["id"] for r in reply.get("results", []) if r["status"] == "ok"]
    for entity_id, blob in zip(ok_ids, blobs):
        suffix = "png" if blob.startswith(b"\x89PNG") else "rvid"
        (out / f"entity_{entity_id}.{suffix}").write_bytes(blob)
    if blobs:
        print(f"wrote {len(blobs)} blobs to {out}")


def cmd_bench(args: argparse.Namespace) -> None:
    if args.query_id not in TEMPLATES:
        raise SystemExit(f"unknown query id {args.query_id!r}; have {sorted(TEMPLATES)}")
    if args.category == "c3":
        if args.clients < 2 or args.clients > 128 or args.clients & (args.clients - 1):
            raise SystemExit("c3 needs --clients as a power of two in 2..128")
    elif args.clients != 1:
        raise SystemExit(f"{args.category} is single-client; drop --clients")
    rows = run_category_bench(args)
    if args.csv:
        write_csv(args.csv, rows)
        print(f"wrote {len(rows)} rows to {args.csv}")


def main(argv: list[str] | None = None) -> None:
    parser = argparse.ArgumentParser(description="benchmark and client tooling")
    parser.add_argument("--log-level", default="warning")
    sub = parser.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen-dataset", help="write synthetic media + manifest")
    g.add_argument("--out", required=True)
    g.add_argument("--images", type=int, default=100)
    g.add_argument("--videos", type=int, default=0)
    g.add_argument("--width", type=int, default=DEFAULT_IMAGE_SIZE[0])
    g.add_argument("--height", type=int, default=DEFAULT_IMAGE_SIZE[1])
    g.add_argument("--no-blob", action="store_true")
    g.add_argument("--seed", type=int, default=DEFAULT_SEED)
    g.set_defaults(fn=cmd_gen_dataset)

    s = sub.add_parser("seed", help="add a manifest's entities to a server")
    s.add_argument("--server", default=f"127.0.0.1:{55555}")
    s.add_argument("--manifest", required=True)
    s.set_defaults(fn=cmd_seed)

    q = sub.add_parser("query", help="send one query file")
    q.add_argument("--server", default=f"127.0.0.1:{55555}")
    q.add_argument("--file", required=True)
    q.add_argument("--out", default="query_out")
    q.set_defaults(fn=cmd_query)

    b = sub.add_parser("bench", help="timing runs")
    b.add_argument("--category", choices=["c1", "c2", "c3", "scaleout"], required=True)
    b.add_argument("--query-id", default="c2-image")
    b.add_argument("--entities", type=int, default=100)
    b.add_argument("--runs", type=int, default=15)
    b.add_argument("--clients", type=int, default=1)
    b.add_argument("--mode", choices=["async", "sync", "both"], default="both")
    b.add_argument("--latency-ms", type=float, default=50.0)
    b.add_argument("--workers", default="1,2,4,8", help="scaleout worker counts, comma separated")
    b.add_argument("--workers-per-mode", type=int, default=1)
    b.add_argument("--seed", type=int, default=DEFAULT_SEED)
    b.add_argument("--csv", default="bench.csv")
    b.add_argument("--server", help="external server host:port (skips self-hosting)")
    b.add_argument("--worker-url", help="worker url for remote ops when --server is used")
    b.set_defaults(fn=cmd_bench)

    args = parser.parse_args(argv)
    logging.basicConfig(level=args.log_level.upper(), format="%(asctime)s %(name)s %(levelname)s %(message)s")
    args.fn(args)


if __name__ == "__main__":
    main()
