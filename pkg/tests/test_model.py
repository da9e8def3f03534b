"""Core types and request validation."""

from __future__ import annotations

import pytest
from fractions import Fraction
from hypothesis import given, strategies as st

from vizquery.model import (
    Comparator,
    Constraint,
    ConstraintTypeError,
    EntityResponseDictionary,
    EntityStatus,
    ExecClass,
    MediaKind,
    MediaObject,
    OperationSpec,
    PixelImage,
    Query,
    QueryValidationError,
    Verb,
    operation_to_json,
    query_to_json,
    validate_query,
)


def px(w=2, h=2, c=1):
    return PixelImage(w, h, c, bytes(w * h * c))


# -- PixelImage / MediaObject -------------------------------------------------


def test_pixel_image_rejects_wrong_byte_length():
    with pytest.raises(ValueError):
        PixelImage(2, 2, 1, bytes(3))


def test_pixel_image_rejects_bad_channel_count():
    with pytest.raises(ValueError):
        PixelImage(2, 2, 2, bytes(8))


def test_image_constructor_single_frame_no_fps():
    m = MediaObject.image(px())
    assert m.kind is MediaKind.IMAGE
    assert len(m.frames) == 1
    assert m.fps is None
    assert (m.width, m.height, m.channels) == (2, 2, 1)


def test_video_defaults_fps_25():
    m = MediaObject.video((px(), px()))
    assert m.kind is MediaKind.VIDEO
    assert m.fps == Fraction(25)


def test_video_rejects_mixed_frame_shapes():
    with pytest.raises(ValueError):
        MediaObject.video((px(2, 2), px(3, 2)))


def test_image_rejects_multiple_frames():
    with pytest.raises(ValueError):
        MediaObject(MediaKind.IMAGE, (px(), px()))


def test_with_frames_preserves_kind_fps_hints():
    m = MediaObject.video((px(),), fps=30, hints={"activity": "running"})
    m2 = m.with_frames((px(4, 4),))
    assert m2.kind is MediaKind.VIDEO
    assert m2.fps == Fraction(30)
    assert m2.hints == {"activity": "running"}
    assert m2.width == 4


# -- constraints --------------------------------------------------------------


@pytest.mark.parametrize(
    "cmp,value,actual,expect",
    [
        ("==", 5, 5, True),
        ("==", 5, 6, False),
        ("!=", "a", "b", True),
        ("<", 10, 3, True),
        ("<=", 10, 10, True),
        (">", 2.5, 3, True),
        (">=", 4, 3, False),
    ],
)
def test_constraint_comparators(cmp, value, actual, expect):
    c = Constraint("p", Comparator(cmp), value)
    assert c.matches(actual) is expect


def test_constraint_int_float_promote():
    assert Constraint("p", Comparator.EQ, 2).matches(2.0)


def test_constraint_string_vs_number_raises():
    with pytest.raises(ConstraintTypeError):
        Constraint("p", Comparator.LT, "abc").matches(7)
    with pytest.raises(ConstraintTypeError):
        Constraint("p", Comparator.EQ, 7).matches("abc")


# -- operation spec invariants ------------------------------------------------


def test_remote_requires_endpoint():
    with pytest.raises(ValueError):
        OperationSpec("gaussianblur", ExecClass.REMOTE, {})


def test_udf_requires_port():
    with pytest.raises(ValueError):
        OperationSpec("udf_grayscale", ExecClass.UDF, {})


def test_native_must_be_known():
    with pytest.raises(ValueError):
        OperationSpec("warp", ExecClass.NATIVE, {})


# -- validate_query -----------------------------------------------------------


def test_validate_minimal_find():
    q = validate_query({"verb": "FindImage"})
    assert q.verb is Verb.FIND_IMAGE
    assert q.constraints == ()
    assert q.operations == ()


def test_validate_full_find_round_trip():
    raw = {
        "verb": "FindVideo",
        "constraints": {"category": ["==", "activity"], "score": [">=", 2, "<", 9]},
        "operations": [
            {"type": "grayscale"},
            {"type": "facedetect_box", "url": "http://h:1/op"},
            {"type": "udf_grayscale", "port": 5555},
        ],
        "blob_count": 0,
    }
    q = validate_query(raw)
    assert q.verb is Verb.FIND_VIDEO
    # the range constraint expands to two predicates on the same property
    assert len(q.constraints) == 3
    assert [op.exec_class for op in q.operations] == [
        ExecClass.NATIVE,
        ExecClass.REMOTE,
        ExecClass.UDF,
    ]
    # and serializing the parsed form is accepted again
    q2 = validate_query(query_to_json(q))
    assert q2 == q


def test_validate_add_image():
    q = validate_query({"verb": "AddImage", "metadata": {"name": "x", "n": 3}, "blob_count": 1})
    assert q.verb.is_add
    assert q.metadata["n"] == 3


def test_validate_collects_all_violations():
    raw = {
        "verb": "FindImage",
        "metadata": {"x": 1},  # metadata is for Add only
        "constraints": {"p": ["~~", 1]},  # bad comparator
        "operations": [{"type": "nosuchop"}],  # not a native op
        "blob_count": 1,  # Find sends no blobs
    }
    with pytest.raises(QueryValidationError) as ei:
        validate_query(raw)
    assert len(ei.value.violations) >= 4


def test_validate_rejects_unknown_verb_and_fields():
    with pytest.raises(QueryValidationError):
        validate_query({"verb": "DropTable"})
    with pytest.raises(QueryValidationError):
        validate_query({"verb": "FindImage", "frobnicate": True})


def test_validate_rejects_url_and_port_together():
    raw = {
        "verb": "FindImage",
        "operations": [{"type": "grayscale", "url": "http://h:1/x", "port": 9}],
    }
    with pytest.raises(QueryValidationError):
        validate_query(raw)


def test_validate_exec_must_match_routing():
    raw = {"verb": "FindImage", "operations": [{"type": "grayscale", "exec": "remote"}]}
    with pytest.raises(QueryValidationError):
        validate_query(raw)
    ok = {"verb": "FindImage", "operations": [{"type": "grayscale", "exec": "native"}]}
    assert validate_query(ok).operations[0].exec_class is ExecClass.NATIVE


def test_validate_native_required_options():
    with pytest.raises(QueryValidationError):
        validate_query({"verb": "FindImage", "operations": [{"type": "crop", "options": {"x": 0}}]})


def test_validate_add_rejects_constraints_and_operations():
    raw = {
        "verb": "AddImage",
        "blob_count": 1,
        "constraints": {"a": ["==", 1]},
        "operations": [{"type": "grayscale"}],
    }
    with pytest.raises(QueryValidationError) as ei:
        validate_query(raw)
    assert len(ei.value.violations) >= 2


def test_validate_labels_map_option():
    raw = {
        "verb": "FindVideo",
        "operations": [
            {"type": "activity_label", "url": "http://h:1/op", "options": {"labels": {"running": "RUN"}}}
        ],
    }
    q = validate_query(raw)
    assert q.operations[0].options["labels"] == {"running": "RUN"}


def test_operation_to_json_round_trip():
    op = OperationSpec("facedetect_mask", ExecClass.REMOTE, {"radius": 4}, endpoint="http://h:9/op")
    doc = operation_to_json(op)
    assert doc["url"] == "http://h:9/op"
    q = validate_query({"verb": "FindImage", "operations": [doc]})
    assert q.operations[0] == op


@given(
    st.dictionaries(
        st.text(min_size=1, max_size=8).filter(lambda s: s not in ("verb",)),
        st.one_of(st.integers(-1000, 1000), st.floats(-1e6, 1e6, allow_nan=False), st.text(max_size=12)),
        max_size=5,
    )
)
def test_validate_add_metadata_scalars_accepted(metadata):
    q = validate_query({"verb": "AddVideo", "metadata": metadata, "blob_count": 1})
    assert dict(q.metadata) == metadata


# -- entity response dictionary ----------------------------------------------


def test_erd_lifecycle():
    erd = EntityResponseDictionary()
    m = MediaObject.image(px())
    erd.update_progress(7, m, 1)
    assert erd.get(7).status is EntityStatus.PENDING
    assert erd.get(7).ops_done == 1
    erd.mark_ok(7, m, 2)
    assert erd.get(7).status is EntityStatus.OK
    erd.mark_failed(8, None, 0, "fetch: boom")
    snap = erd.snapshot()
    assert snap[8].error == "fetch: boom"
    assert len(erd) == 2


def test_erd_snapshot_is_detached():
    erd = EntityResponseDictionary()
    snap = erd.snapshot()
    erd.mark_ok(1, MediaObject.image(px()), 0)
    assert 1 not in snap
