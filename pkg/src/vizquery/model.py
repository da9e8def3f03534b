"""Core domain types: pixel buffers, media objects, queries, and pipeline bookkeeping.

Everything here is plain in-memory data shared by the store, the execution
pipeline, and the network front end. All types are immutable after
construction except :class:`EntityResponseDictionary`, which is the one
concurrent structure (per-entity results written by the pipeline workers).
"""

from __future__ import annotations

import threading
from dataclasses import dataclass, field
from enum import Enum
from fractions import Fraction
from typing import Any, Mapping

MetadataValue = str | int | float

#: Operation names the engine executes locally. ``validate_query`` resolves an
#: operation with no url/port against this set; the native registry must match.
NATIVE_OP_NAMES = frozenset({"crop", "resize", "rotate", "flip", "grayscale", "threshold"})

#: Options a native operation cannot run without (checked at validation time).
NATIVE_REQUIRED_OPTIONS: Mapping[str, tuple[str, ...]] = {
    "crop": ("x", "y", "width", "height"),
    "resize": ("width", "height"),
    "rotate": ("degrees",),
    "flip": ("axis",),
    "grayscale": (),
    "threshold": ("value",),
}

DEFAULT_VIDEO_FPS = Fraction(25)


class MediaKind(str, Enum):
    IMAGE = "image"
    VIDEO = "video"


@dataclass(frozen=True)
class PixelImage:
    """One decoded frame: row-major interleaved bytes, 1 (gray) or 3 (RGB) channels."""

    width: int
    height: int
    channels: int
    data: bytes

    def __post_init__(self) -> None:
        if self.width < 1 or self.height < 1:
            raise ValueError(f"image dimensions must be positive, got {self.width}x{self.height}")
        if self.channels not in (1, 3):
            raise ValueError(f"channels must be 1 or 3, got {self.channels}")
        expected = self.width * self.height * self.channels
        if len(self.data) != expected:
            raise ValueError(
                f"pixel buffer holds {len(self.data)} bytes, expected "
                f"{expected} for {self.width}x{self.height}x{self.channels}"
            )


@dataclass(frozen=True)
class MediaObject:
    """An image or a video: a non-empty run of uniform frames plus playback rate.

    ``hints`` carries advisory string metadata (e.g. the stored "activity"
    label) that operations may consult; it never affects encoded bytes.
    """

    kind: MediaKind
    frames: tuple[PixelImage, ...]
    fps: Fraction | None = None
    hints: Mapping[str, str] = field(default_factory=dict)

    def __post_init__(self) -> None:
        if not self.frames:
            raise ValueError("media must contain at least one frame")
        first = self.frames[0]
        for i, frame in enumerate(self.frames):
            if (frame.width, frame.height, frame.channels) != (first.width, first.height, first.channels):
                raise ValueError(f"frame {i} dimensions differ from frame 0")
        if self.kind is MediaKind.IMAGE:
            if len(self.frames) != 1:
                raise ValueError("an image holds exactly one frame")
            if self.fps is not None:
                raise ValueError("fps applies to videos only")
        else:
            fps = self.fps if self.fps is not None else DEFAULT_VIDEO_FPS
            if fps <= 0:
                raise ValueError("fps must be positive")
            object.__setattr__(self, "fps", Fraction(fps))

    @classmethod
    def image(cls, frame: PixelImage, hints: Mapping[str, str] | None = None) -> "MediaObject":
        return cls(MediaKind.IMAGE, (frame,), hints=dict(hints or {}))

    @classmethod
    def video(
        cls,
        frames: tuple[PixelImage, ...] | list[PixelImage],
        fps: Fraction | int | None = None,
        hints: Mapping[str, str] | None = None,
    ) -> "MediaObject":
        return cls(MediaKind.VIDEO, tuple(frames), fps=fps, hints=dict(hints or {}))

    @property
    def width(self) -> int:
        return self.frames[0].width

    @property
    def height(self) -> int:
        return self.frames[0].height

    @property
    def channels(self) -> int:
        return self.frames[0].channels

    def with_frames(self, frames: tuple[PixelImage, ...] | list[PixelImage]) -> "MediaObject":
        """Same kind/fps/hints, new frame content (frame count must stay legal)."""
        return MediaObject(self.kind, tuple(frames), fps=self.fps, hints=self.hints)


class Comparator(str, Enum):
    EQ = "=="
    NE = "!="
    LT = "<"
    LE = "<="
    GT = ">"
    GE = ">="


class ConstraintTypeError(TypeError):
    """Raised when a constraint compares values of incompatible primitive kinds."""


def _comparable(a: MetadataValue, b: MetadataValue) -> bool:
    if isinstance(a, str) or isinstance(b, str):
        return isinstance(a, str) and isinstance(b, str)
    # int/float promote freely; bool is not a metadata kind
    return True


@dataclass(frozen=True)
class Constraint:
    """One predicate over a metadata property; queries AND these together."""

    prop: str
    comparator: Comparator
    value: MetadataValue

    def __post_init__(self) -> None:
        if not self.prop:
            raise ValueError("constraint property must be non-empty")

    def matches(self, actual: MetadataValue) -> bool:
        if not _comparable(actual, self.value):
            raise ConstraintTypeError(
                f"cannot compare stored {type(actual).__name__} with "
                f"{type(self.value).__name__} on property {self.prop!r}"
            )
        op = self.comparator
        if op is Comparator.EQ:
            return actual == self.value
        if op is Comparator.NE:
            return actual != self.value
        if op is Comparator.LT:
            return actual < self.value
        if op is Comparator.LE:
            return actual <= self.value
        if op is Comparator.GT:
            return actual > self.value
        return actual >= self.value


class ExecClass(str, Enum):
    NATIVE = "native"
    REMOTE = "remote"
    UDF = "udf"


@dataclass(frozen=True)
class OperationSpec:
    """One pipeline step: what to run, where, and with which options.

    Option values are scalars, except that ops taking lookup tables (e.g. an
    activity label map) may receive a flat string-to-string object.
    """

    type: str
    exec_class: ExecClass
    options: Mapping[str, Any] = field(default_factory=dict)
    endpoint: str | None = None
    channel_port: int | None = None

    def __post_init__(self) -> None:
        if not self.type:
            raise ValueError("operation type must be non-empty")
        if self.exec_class is ExecClass.REMOTE and not self.endpoint:
            raise ValueError(f"remote operation {self.type!r} requires an endpoint url")
        if self.exec_class is ExecClass.UDF and not self.channel_port:
            raise ValueError(f"udf operation {self.type!r} requires a channel port")
        if self.exec_class is ExecClass.NATIVE and self.type not in NATIVE_OP_NAMES:
            raise ValueError(f"unknown native operation {self.type!r}")


class Verb(str, Enum):
    ADD_IMAGE = "AddImage"
    ADD_VIDEO = "AddVideo"
    FIND_IMAGE = "FindImage"
    FIND_VIDEO = "FindVideo"

    @property
    def is_add(self) -> bool:
        return self in (Verb.ADD_IMAGE, Verb.ADD_VIDEO)

    @property
    def media_kind(self) -> MediaKind:
        return MediaKind.IMAGE if self in (Verb.ADD_IMAGE, Verb.FIND_IMAGE) else MediaKind.VIDEO


@dataclass(frozen=True)
class Query:
    """A validated client request: constraint conjunction plus an ordered op list."""

    verb: Verb
    metadata: Mapping[str, MetadataValue] = field(default_factory=dict)
    constraints: tuple[Constraint, ...] = ()
    operations: tuple[OperationSpec, ...] = ()
    blob_count: int = 0


class QueryValidationError(ValueError):
    """Carries every violation found in a query document, not just the first."""

    def __init__(self, violations: list[str]):
        self.violations = list(violations)
        super().__init__("; ".join(violations))


_COMPARATORS = {c.value: c for c in Comparator}


def _check_scalar(value: Any) -> bool:
    return isinstance(value, (str, int, float)) and not isinstance(value, bool)


def _check_option_value(value: Any) -> bool:
    if _check_scalar(value):
        return True
    return isinstance(value, Mapping) and all(
        isinstance(k, str) and isinstance(v, str) for k, v in value.items()
    )


def _parse_operation(index: int, raw: Any, errors: list[str]) -> OperationSpec | None:
    if not isinstance(raw, Mapping):
        errors.append(f"operation {index}: not an object")
        return None
    op_type = raw.get("type")
    if not isinstance(op_type, str) or not op_type:
        errors.append(f"operation {index}: missing type")
        return None
    for key in raw:
        if key not in ("type", "exec", "url", "port", "options"):
            errors.append(f"operation {index}: unknown field {key!r}")
            return None
    options = raw.get("options", {})
    if not isinstance(options, Mapping) or not all(
        isinstance(k, str) and _check_option_value(v) for k, v in options.items()
    ):
        errors.append(f"operation {index}: options must map strings to scalars or string maps")
        return None

    url = raw.get("url")
    port = raw.get("port")
    if url is not None and port is not None:
        errors.append(f"operation {index}: url and port are mutually exclusive")
        return None
    inferred = ExecClass.REMOTE if url is not None else ExecClass.UDF if port is not None else ExecClass.NATIVE
    declared = raw.get("exec")
    if declared is not None:
        try:
            declared_class = ExecClass(declared)
        except ValueError:
            errors.append(f"operation {index}: unknown exec class {declared!r}")
            return None
        if declared_class is ExecClass.REMOTE and url is None:
            errors.append(f"operation {index}: remote operation missing url")
            return None
        if declared_class is ExecClass.UDF and port is None:
            errors.append(f"operation {index}: udf operation missing port")
            return None
        if declared_class is not inferred:
            errors.append(f"operation {index}: exec {declared!r} contradicts url/port fields")
            return None

    if inferred is ExecClass.REMOTE:
        if not isinstance(url, str) or not url:
            errors.append(f"operation {index}: url must be a non-empty string")
            return None
        return OperationSpec(op_type, ExecClass.REMOTE, dict(options), endpoint=url)
    if inferred is ExecClass.UDF:
        if not isinstance(port, int) or isinstance(port, bool) or not (0 < port < 65536):
            errors.append(f"operation {index}: port must be an integer in 1..65535")
            return None
        return OperationSpec(op_type, ExecClass.UDF, dict(options), channel_port=port)

    if op_type not in NATIVE_OP_NAMES:
        errors.append(f"operation {index}: unknown native operation {op_type!r}")
        return None
    missing = [k for k in NATIVE_REQUIRED_OPTIONS[op_type] if k not in options]
    if missing:
        errors.append(f"operation {index}: {op_type} missing options {missing}")
        return None
    return OperationSpec(op_type, ExecClass.NATIVE, dict(options))


def _parse_constraints(raw: Any, errors: list[str]) -> tuple[Constraint, ...]:
    if not isinstance(raw, Mapping):
        errors.append("constraints must be an object")
        return ()
    out: list[Constraint] = []
    for prop, spec in raw.items():
        if not isinstance(prop, str) or not prop:
            errors.append(f"constraint property {prop!r} must be a non-empty string")
            continue
        if not isinstance(spec, (list, tuple)) or len(spec) == 0 or len(spec) % 2 != 0:
            errors.append(f"constraint {prop!r}: expected [comparator, value, ...] pairs")
            continue
        for cmp_sym, value in zip(spec[::2], spec[1::2]):
            comparator = _COMPARATORS.get(cmp_sym)
            if comparator is None:
                errors.append(f"constraint {prop!r}: unknown comparator {cmp_sym!r}")
                continue
            if not _check_scalar(value):
                errors.append(f"constraint {prop!r}: value must be a string or number")
                continue
            out.append(Constraint(prop, comparator, value))
    return tuple(out)


def validate_query(raw: Any) -> Query:
    """Turn a parsed JSON document into a :class:`Query`, or raise listing every violation."""
    errors: list[str] = []
    if not isinstance(raw, Mapping):
        raise QueryValidationError(["query must be a JSON object"])

    verb_name = raw.get("verb")
    verb: Verb | None = None
    try:
        verb = Verb(verb_name)
    except ValueError:
        errors.append(f"unknown verb {verb_name!r}")

    for key in raw:
        if key not in ("verb", "metadata", "constraints", "operations", "blob_count"):
            errors.append(f"unknown field {key!r}")

    metadata_raw = raw.get("metadata", {})
    metadata: dict[str, MetadataValue] = {}
    if not isinstance(metadata_raw, Mapping):
        errors.append("metadata must be an object")
    else:
        for k, v in metadata_raw.items():
            if not isinstance(k, str) or not _check_scalar(v):
                errors.append(f"metadata entry {k!r} must map a string to a scalar")
            else:
                metadata[k] = v

    constraints: tuple[Constraint, ...] = ()
    if "constraints" in raw:
        constraints = _parse_constraints(raw["constraints"], errors)

    operations: list[OperationSpec] = []
    ops_raw = raw.get("operations", [])
    if not isinstance(ops_raw, (list, tuple)):
        errors.append("operations must be a list")
    else:
        for i, op_raw in enumerate(ops_raw):
            op = _parse_operation(i, op_raw, errors)
            if op is not None:
                operations.append(op)

    blob_count = raw.get("blob_count", 0)
    if not isinstance(blob_count, int) or isinstance(blob_count, bool) or blob_count < 0:
        errors.append("blob_count must be a non-negative integer")
        blob_count = 0

    if verb is not None:
        if verb.is_add:
            if blob_count != 1:
                errors.append(f"{verb.value} requires blob_count 1, got {blob_count}")
            if constraints:
                errors.append(f"{verb.value} does not accept constraints")
            if operations:
                errors.append(f"{verb.value} does not accept operations")
        else:
            if blob_count != 0:
                errors.append(f"{verb.value} requires blob_count 0, got {blob_count}")
            if metadata:
                errors.append(f"{verb.value} does not accept metadata")

    if errors:
        raise QueryValidationError(errors)
    assert verb is not None
    return Query(
        verb=verb,
        metadata=metadata,
        constraints=constraints,
        operations=tuple(operations),
        blob_count=blob_count,
    )


def operation_to_json(op: OperationSpec) -> dict[str, Any]:
    doc: dict[str, Any] = {"type": op.type}
    if op.exec_class is ExecClass.REMOTE:
        doc["url"] = op.endpoint
    elif op.exec_class is ExecClass.UDF:
        doc["port"] = op.channel_port
    if op.options:
        doc["options"] = dict(op.options)
    return doc


def query_to_json(query: Query) -> dict[str, Any]:
    """Serialize back to the wire document shape accepted by :func:`validate_query`."""
    doc: dict[str, Any] = {"verb": query.verb.value}
    if query.metadata:
        doc["metadata"] = dict(query.metadata)
    if query.constraints:
        grouped: dict[str, list[MetadataValue]] = {}
        for c in query.constraints:
            grouped.setdefault(c.prop, []).extend([c.comparator.value, c.value])
        doc["constraints"] = grouped
    if query.operations:
        doc["operations"] = [operation_to_json(op) for op in query.operations]
    doc["blob_count"] = query.blob_count
    return doc


class EntityStatus(str, Enum):
    PENDING = "pending"
    OK = "ok"
    FAILED = "failed"


@dataclass
class EntityTask:
    """The unit circulating through the pipeline queues.

    ``pc`` indexes the next unexecuted operation. Ownership is enforced by the
    queue hand-off discipline in the pipeline, not by this type; ``owner`` is
    the instrumentation tag the workers assert on.
    """

    entity_id: int
    media: MediaObject
    ops: tuple[OperationSpec, ...]
    pc: int = 0
    owner: str | None = None


@dataclass(frozen=True)
class EntityResult:
    media: MediaObject | None
    status: EntityStatus
    ops_done: int
    error: str | None = None


class EntityResponseDictionary:
    """Entity id -> latest media snapshot and status; written after every operation.

    Workers update disjoint keys concurrently; the main thread reads the final
    content only after pipeline termination.
    """

    def __init__(self) -> None:
        self._lock = threading.Lock()
        self._entries: dict[int, EntityResult] = {}

    def update_progress(self, entity_id: int, media: MediaObject, ops_done: int) -> None:
        with self._lock:
            self._entries[entity_id] = EntityResult(media, EntityStatus.PENDING, ops_done)

    def mark_ok(self, entity_id: int, media: MediaObject, ops_done: int) -> None:
        with self._lock:
            self._entries[entity_id] = EntityResult(media, EntityStatus.OK, ops_done)

    def mark_failed(self, entity_id: int, media: MediaObject | None, ops_done: int, error: str) -> None:
        with self._lock:
            self._entries[entity_id] = EntityResult(media, EntityStatus.FAILED, ops_done, error)

    def get(self, entity_id: int) -> EntityResult | None:
        with self._lock:
            return self._entries.get(entity_id)

    def snapshot(self) -> dict[int, EntityResult]:
        with self._lock:
            return dict(self._entries)

    def __len__(self) -> int:
        with self._lock:
            return len(self._entries)
