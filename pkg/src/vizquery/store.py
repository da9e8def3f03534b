"""In-memory entity store: metadata plus encoded media blobs.

Add takes the writer lock and issues strictly increasing ids starting at 1.
Find-side helpers only ever read snapshots, and ``get_media`` decodes a fresh
object per call, so pipeline mutations can never reach stored bytes.
"""

from __future__ import annotations

import threading
from dataclasses import dataclass
from typing import Mapping

from . import media_codec
from .model import Constraint, MediaKind, MediaObject, MetadataValue


class UnknownEntityError(LookupError):
    pass


class StoreKindError(ValueError):
    """Blob kind does not match the verb used to add it."""


@dataclass(frozen=True)
class StoreRecord:
    entity_id: int
    kind: MediaKind
    metadata: Mapping[str, MetadataValue]
    media_bytes: bytes


class MediaStore:
    def __init__(self) -> None:
        self._lock = threading.Lock()
        self._records: dict[int, StoreRecord] = {}
        self._next_id = 1

    def add_entity(self, kind: MediaKind, metadata: Mapping[str, MetadataValue], media_bytes: bytes) -> int:
        # decode up front: a blob that cannot round-trip is rejected before an id is burned
        decoded = media_codec.decode_media(media_bytes)
        if decoded.kind is not kind:
            raise StoreKindError(f"blob decodes to {decoded.kind.value}, expected {kind.value}")
        with self._lock:
            entity_id = self._next_id
            self._next_id += 1
            self._records[entity_id] = StoreRecord(entity_id, kind, dict(metadata), media_bytes)
        return entity_id

    def _snapshot(self) -> list[StoreRecord]:
        with self._lock:
            return list(self._records.values())

    def filter(self, kind: MediaKind, constraints: list[Constraint] | tuple[Constraint, ...]) -> list[int]:
        """Ids (ascending) of all records of ``kind`` satisfying every constraint.

        A record lacking a constrained property never matches, whatever the
        comparator. Comparing incompatible kinds raises.
        """
        matched = []
        for record in self._snapshot():
            if record.kind is not kind:
                continue
            ok = True
            for c in constraints:
                if c.prop not in record.metadata:
                    ok = False
                    break
                if not c.matches(record.metadata[c.prop]):
                    ok = False
                    break
            if ok:
                matched.append(record.entity_id)
        return sorted(matched)

    def _record(self, entity_id: int) -> StoreRecord:
        with self._lock:
            record = self._records.get(entity_id)
        if record is None:
            raise UnknownEntityError(f"no entity with id {entity_id}")
        return record

    def get_media(self, entity_id: int) -> MediaObject:
        """Fresh decode of the stored blob; the activity tag rides along as a hint."""
        record = self._record(entity_id)
        hints = {}
        activity = record.metadata.get("activity")
        if isinstance(activity, str):
            hints["activity"] = activity
        return media_codec.decode_media(record.media_bytes, hints=hints or None)

    def get_metadata(self, entity_id: int) -> Mapping[str, MetadataValue]:
        return dict(self._record(entity_id).metadata)

    def get_media_bytes(self, entity_id: int) -> bytes:
        return self._record(entity_id).media_bytes

    def all_ids(self) -> list[int]:
        with self._lock:
            return sorted(self._records)

    def __len__(self) -> int:
        with self._lock:
            return len(self._records)
