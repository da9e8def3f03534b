"""Metadata store: ids, filtering, and decode-on-read semantics."""

from __future__ import annotations

import threading

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from conftest import image_from_array, video_from_arrays
from vizquery.media_codec import MediaCodecError, encode_media
from vizquery.model import Comparator, Constraint, ConstraintTypeError, MediaKind
from vizquery.store import MediaStore, StoreKindError, UnknownEntityError


def png(val=0):
    return encode_media(image_from_array(np.full((2, 2), val)))


def rvid(frames=2):
    return encode_media(video_from_arrays([np.zeros((2, 2))] * frames, fps=4))


def c(prop, cmp, value):
    return Constraint(prop, Comparator(cmp), value)


def test_ids_start_at_one_and_increase():
    s = MediaStore()
    ids = [s.add_entity(MediaKind.IMAGE, {}, png()) for _ in range(3)]
    assert ids == [1, 2, 3]


def test_add_rejects_undecodable_without_burning_id():
    s = MediaStore()
    with pytest.raises(MediaCodecError):
        s.add_entity(MediaKind.IMAGE, {}, b"junk")
    assert s.add_entity(MediaKind.IMAGE, {}, png()) == 1


def test_add_rejects_kind_mismatch():
    s = MediaStore()
    with pytest.raises(StoreKindError):
        s.add_entity(MediaKind.IMAGE, {}, rvid())
    with pytest.raises(StoreKindError):
        s.add_entity(MediaKind.VIDEO, {}, png())


def test_get_media_returns_fresh_decode():
    s = MediaStore()
    eid = s.add_entity(MediaKind.IMAGE, {}, png(7))
    a, b = s.get_media(eid), s.get_media(eid)
    assert a == b
    assert a is not b
    assert s.get_media_bytes(eid) == png(7)


def test_get_media_unknown_id():
    with pytest.raises(UnknownEntityError):
        MediaStore().get_media(99)


def test_filter_kind_partition():
    s = MediaStore()
    i1 = s.add_entity(MediaKind.IMAGE, {"category": "x"}, png())
    v1 = s.add_entity(MediaKind.VIDEO, {"category": "x"}, rvid())
    assert s.filter(MediaKind.IMAGE, []) == [i1]
    assert s.filter(MediaKind.VIDEO, []) == [v1]


def test_filter_conjunction_and_order():
    s = MediaStore()
    ids = [
        s.add_entity(MediaKind.IMAGE, {"category": "a", "score": i}, png())
        for i in range(5)
    ]
    got = s.filter(MediaKind.IMAGE, [c("category", "==", "a"), c("score", ">=", 1), c("score", "<", 4)])
    assert got == ids[1:4]
    assert got == sorted(got)


def test_filter_absent_property_never_matches():
    s = MediaStore()
    s.add_entity(MediaKind.IMAGE, {"a": 1}, png())
    assert s.filter(MediaKind.IMAGE, [c("missing", "==", 1)]) == []
    assert s.filter(MediaKind.IMAGE, [c("missing", "!=", 1)]) == []


def test_filter_type_conflict_propagates():
    s = MediaStore()
    s.add_entity(MediaKind.IMAGE, {"score": "high"}, png())
    with pytest.raises(ConstraintTypeError):
        s.filter(MediaKind.IMAGE, [c("score", "<", 5)])


def test_video_activity_metadata_becomes_hint():
    s = MediaStore()
    eid = s.add_entity(MediaKind.VIDEO, {"activity": "running"}, rvid())
    assert s.get_media(eid).hints == {"activity": "running"}
    # non-string activity values stay out of hints
    eid2 = s.add_entity(MediaKind.VIDEO, {"activity": 5}, rvid())
    assert s.get_media(eid2).hints == {}


def test_stored_bytes_not_mutated_by_reads():
    s = MediaStore()
    eid = s.add_entity(MediaKind.IMAGE, {}, png(9))
    before = s.get_media_bytes(eid)
    _ = s.get_media(eid)
    assert s.get_media_bytes(eid) == before


def test_concurrent_adds_unique_ids():
    s = MediaStore()
    got: list[int] = []
    lock = threading.Lock()

    def add():
        eid = s.add_entity(MediaKind.IMAGE, {}, png())
        with lock:
            got.append(eid)

    threads = [threading.Thread(target=add) for _ in range(20)]
    for t in threads:
        t.start()
    for t in threads:
        t.join()
    assert sorted(got) == list(range(1, 21))


# brute-force oracle: filtering must equal per-entity predicate evaluation
meta_value = st.one_of(st.integers(-20, 20), st.text(alphabet="abc", max_size=2))


@given(
    st.lists(st.dictionaries(st.sampled_from("pqr"), meta_value, max_size=3), min_size=0, max_size=12),
    st.lists(
        st.tuples(st.sampled_from("pqr"), st.sampled_from(["==", "!=", "<", "<=", ">", ">="]), meta_value),
        max_size=3,
    ),
)
@settings(max_examples=60, deadline=None)
def test_filter_matches_brute_force(metadatas, raw_constraints):
    s = MediaStore()
    blob = png()
    ids = [s.add_entity(MediaKind.IMAGE, md, blob) for md in metadatas]
    constraints = [c(p, op, v) for p, op, v in raw_constraints]

    def matches(md):
        for con in constraints:
            if con.prop not in md:
                return False
            if not con.matches(md[con.prop]):
                return False
        return True

    try:
        expected = [eid for eid, md in zip(ids, metadatas) if matches(md)]
    except ConstraintTypeError:
        with pytest.raises(ConstraintTypeError):
            s.filter(MediaKind.IMAGE, constraints)
        return
    assert s.filter(MediaKind.IMAGE, constraints) == expected
