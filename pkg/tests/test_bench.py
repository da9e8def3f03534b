"""Benchmark tooling: generators, templates, CSV, and a miniature timing run."""

from __future__ import annotations

import csv
import json
import struct

import numpy as np
import pytest

from vizquery import bench
from vizquery.media_codec import decode_media, encode_media
from vizquery.model import MediaKind, validate_query
from vizquery.pipeline import Mode
from vizquery.server import QueryServer, ServerConfig
from vizquery.store import MediaStore


def test_synth_image_deterministic():
    a = bench.synth_image(np.random.default_rng(5))
    b = bench.synth_image(np.random.default_rng(5))
    assert a == b
    assert (a.width, a.height) == bench.DEFAULT_IMAGE_SIZE


def test_synth_image_has_detectable_blob():
    from vizquery.worker_ops import detect_box
    from vizquery.native_ops import to_array

    m = bench.synth_image(np.random.default_rng(0))
    assert detect_box(to_array(m.frames[0])) != (0, 0, 0, 0)


def test_synth_video_shape():
    m = bench.synth_video(np.random.default_rng(1))
    assert m.kind is MediaKind.VIDEO
    assert len(m.frames) == bench.DEFAULT_VIDEO_FRAMES


def test_seed_store_metadata():
    store = MediaStore()
    image_ids, video_ids = bench.seed_store(store, images=3, videos=2)
    assert len(image_ids) == 3 and len(video_ids) == 2
    assert store.get_metadata(image_ids[0])["category"] == "synthetic"
    md = store.get_metadata(video_ids[0])
    assert md["category"] == "activity"
    assert md["activity"] in bench.ACTIVITIES


@pytest.mark.parametrize("query_id", sorted(bench.TEMPLATES))
def test_every_template_validates(query_id):
    template = bench.TEMPLATES[query_id]
    raw = bench.build_find_query(template, "http://worker:1/" if template.needs_worker else None)
    query = validate_query(raw)
    assert query.verb.media_kind is template.kind


def test_template_without_worker_url_refuses():
    with pytest.raises(SystemExit):
        bench.build_find_query(bench.TEMPLATES["iq4"], None)


def test_unit_count_images():
    reply = {"results": [{"status": "ok"}, {"status": "failed"}, {"status": "ok"}]}
    assert bench._unit_count(MediaKind.IMAGE, reply, []) == 2


def test_unit_count_videos_reads_frame_counts(rng):
    from conftest import video_from_arrays

    blobs = [
        encode_media(video_from_arrays([rng.integers(0, 255, (4, 4, 3), dtype=np.uint8)] * n, fps=2))
        for n in (3, 5)
    ]
    assert bench._unit_count(MediaKind.VIDEO, {"results": []}, blobs) == 8


def test_check_reply_aborts_on_entity_failure():
    with pytest.raises(bench.BenchError):
        bench._check_reply({"status": "ok", "results": [{"status": "failed", "id": 1}]})
    bench._check_reply({"status": "ok", "results": [{"status": "ok", "id": 1}]})


def test_run_row_throughput():
    row = bench.RunRow("c1", "iq1", "async", 1, 0, 0, 2.0, 10)
    assert row.throughput == 5.0


def test_write_csv_columns(tmp_path):
    rows = [bench.RunRow("c2", "c2-image", "sync", 1, 1, 0, 1.5, 30)]
    path = tmp_path / "out.csv"
    bench.write_csv(str(path), rows)
    with open(path) as fh:
        got = list(csv.reader(fh))
    assert got[0] == [
        "category", "query_id", "mode", "clients", "workers", "run_index", "duration_s", "entities", "throughput",
    ]
    assert got[1][0] == "c2"
    assert float(got[1][8]) == pytest.approx(20.0)


def test_gen_dataset_and_manifest(tmp_path):
    out = tmp_path / "data"
    bench.main(["gen-dataset", "--out", str(out), "--images", "2", "--videos", "1", "--seed", "3"])
    manifest = json.loads((out / "manifest.json").read_text())
    assert len(manifest) == 3
    kinds = [e["kind"] for e in manifest]
    assert kinds.count("image") == 2 and kinds.count("video") == 1
    for entry in manifest:
        media = decode_media((out / entry["path"]).read_bytes())
        assert media.kind.value == entry["kind"]


def test_seed_and_query_against_live_server(tmp_path, capsys):
    data = tmp_path / "data"
    bench.main(["gen-dataset", "--out", str(data), "--images", "3", "--seed", "11"])
    with QueryServer(ServerConfig(port=0)) as server:
        addr = f"{server.host}:{server.port}"
        bench.main(["seed", "--server", addr, "--manifest", str(data / "manifest.json")])
        assert "added 3 entities" in capsys.readouterr().out

        qfile = tmp_path / "q.json"
        qfile.write_text(json.dumps({
            "verb": "FindImage",
            "constraints": {"category": ["==", "synthetic"]},
            "operations": [{"type": "grayscale"}],
        }))
        outdir = tmp_path / "results"
        bench.main(["query", "--server", addr, "--file", str(qfile), "--out", str(outdir)])
    saved = sorted(outdir.glob("entity_*.png"))
    assert len(saved) == 3
    for p in saved:
        assert decode_media(p.read_bytes()).channels == 1


def test_bench_rejects_bad_client_counts(tmp_path):
    with pytest.raises(SystemExit):
        bench.main(["bench", "--category", "c3", "--clients", "3", "--query-id", "iq1",
                    "--entities", "2", "--runs", "1", "--csv", str(tmp_path / "x.csv")])
    with pytest.raises(SystemExit):
        bench.main(["bench", "--category", "c1", "--clients", "2", "--query-id", "iq1",
                    "--entities", "2", "--runs", "1", "--csv", str(tmp_path / "x.csv")])


def test_tiny_self_hosted_bench(tmp_path, capsys):
    csv_path = tmp_path / "rows.csv"
    bench.main([
        "bench", "--category", "c2", "--query-id", "c2-image", "--entities", "4",
        "--runs", "1", "--mode", "both", "--latency-ms", "5", "--csv", str(csv_path),
    ])
    out = capsys.readouterr().out
    assert "speedup" in out
    with open(csv_path) as fh:
        rows = list(csv.DictReader(fh))
    assert {r["mode"] for r in rows} == {"async", "sync"}
    assert all(int(r["entities"]) == 4 for r in rows)
    assert all(float(r["duration_s"]) > 0 for r in rows)
