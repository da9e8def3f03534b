"""Locally-executed pixel operations.

Every op is deterministic integer math so results are reproducible bit-for-bit
across processes and languages:

* rounding is always floor(x + 0.5), saturated to 0..255 for pixel values
* resize is nearest-neighbour with source index ((2*dst+1)*src_len) // (2*dst_len)
* grayscale luma is floor(0.299*R + 0.587*G + 0.114*B + 0.5)
* threshold binarizes: strictly-greater pixels become 255, the rest 0
* rotate is clockwise and accepts exactly 90, 180 or 270 degrees
"""

from __future__ import annotations

import math
from typing import Callable, Mapping

import numpy as np

from .model import (
    NATIVE_OP_NAMES,
    MediaKind,
    MediaObject,
    MetadataValue,
    OperationSpec,
    PixelImage,
)


class OperationError(ValueError):
    """An operation rejected its options or its input media."""


def to_array(frame: PixelImage) -> np.ndarray:
    arr = np.frombuffer(frame.data, dtype=np.uint8)
    return arr.reshape(frame.height, frame.width, frame.channels)


def from_array(arr: np.ndarray) -> PixelImage:
    if arr.ndim == 2:
        arr = arr[:, :, np.newaxis]
    h, w, c = arr.shape
    return PixelImage(w, h, c, np.ascontiguousarray(arr, dtype=np.uint8).tobytes())


def round_half_up(x: float) -> int:
    return math.floor(x + 0.5)


def scale_dim(value: int, factor: float) -> int:
    # scaled dimensions round half-up and never collapse below one pixel
    return max(1, round_half_up(value * factor))


def quantize_u8(arr: np.ndarray) -> np.ndarray:
    return np.clip(np.floor(arr + 0.5), 0, 255).astype(np.uint8)


def _int_option(options: Mapping[str, MetadataValue], key: str, op: str) -> int:
    if key not in options:
        raise OperationError(f"{op}: missing option {key!r}")
    value = options[key]
    if not isinstance(value, int) or isinstance(value, bool):
        raise OperationError(f"{op}: option {key!r} must be an integer, got {value!r}")
    return value


def _number_option(options: Mapping[str, MetadataValue], key: str, op: str, default: float | None = None) -> float:
    if key not in options:
        if default is None:
            raise OperationError(f"{op}: missing option {key!r}")
        return default
    value = options[key]
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise OperationError(f"{op}: option {key!r} must be a number, got {value!r}")
    return float(value)


FrameOp = Callable[[np.ndarray, Mapping[str, MetadataValue]], np.ndarray]


def op_crop(arr: np.ndarray, options: Mapping[str, MetadataValue]) -> np.ndarray:
    x = _int_option(options, "x", "crop")
    y = _int_option(options, "y", "crop")
    w = _int_option(options, "width", "crop")
    h = _int_option(options, "height", "crop")
    src_h, src_w = arr.shape[:2]
    if w < 1 or h < 1:
        raise OperationError(f"crop: region {w}x{h} must be at least 1x1")
    if x < 0 or y < 0 or x + w > src_w or y + h > src_h:
        raise OperationError(
            f"crop: region ({x},{y},{w},{h}) exceeds {src_w}x{src_h} frame bounds"
        )
    return arr[y : y + h, x : x + w]


def nearest_indices(dst_len: int, src_len: int) -> np.ndarray:
    """Source index per destination index for nearest-neighbour sampling."""
    d = np.arange(dst_len, dtype=np.int64)
    return (2 * d + 1) * src_len // (2 * dst_len)


def op_resize(arr: np.ndarray, options: Mapping[str, MetadataValue]) -> np.ndarray:
    w = _int_option(options, "width", "resize")
    h = _int_option(options, "height", "resize")
    if w < 1 or h < 1:
        raise OperationError(f"resize: target {w}x{h} must be at least 1x1")
    src_h, src_w = arr.shape[:2]
    rows = nearest_indices(h, src_h)
    cols = nearest_indices(w, src_w)
    return arr[rows][:, cols]


def op_rotate(arr: np.ndarray, options: Mapping[str, MetadataValue]) -> np.ndarray:
    degrees = _int_option(options, "degrees", "rotate")
    if degrees not in (90, 180, 270):
        raise OperationError(f"rotate: degrees must be 90, 180 or 270, got {degrees}")
    # np.rot90 turns counter-clockwise; negative k gives the clockwise rotation
    return np.rot90(arr, k=-(degrees // 90))


def op_flip(arr: np.ndarray, options: Mapping[str, MetadataValue]) -> np.ndarray:
    axis = options.get("axis")
    if axis == "horizontal":
        return arr[:, ::-1]
    if axis == "vertical":
        return arr[::-1, :]
    raise OperationError(f"flip: axis must be 'horizontal' or 'vertical', got {axis!r}")


def luma_u8(r: np.ndarray, g: np.ndarray, b: np.ndarray) -> np.ndarray:
    # floor(0.299R + 0.587G + 0.114B + 0.5) computed exactly in thousandths,
    # so half-way cases land the same way in every implementation
    acc = r.astype(np.int64) * 299 + g.astype(np.int64) * 587 + b.astype(np.int64) * 114
    return ((acc + 500) // 1000).astype(np.uint8)


def op_grayscale(arr: np.ndarray, options: Mapping[str, MetadataValue]) -> np.ndarray:
    if arr.shape[2] == 1:
        return arr
    gray = luma_u8(arr[:, :, 0], arr[:, :, 1], arr[:, :, 2])
    return gray[:, :, np.newaxis]


def op_threshold(arr: np.ndarray, options: Mapping[str, MetadataValue]) -> np.ndarray:
    value = _int_option(options, "value", "threshold")
    if not 0 <= value <= 255:
        raise OperationError(f"threshold: value must lie in 0..255, got {value}")
    # binarize: strictly-greater pixels become 255, everything else 0
    return np.where(arr > value, 255, 0).astype(np.uint8)


NATIVE_REGISTRY: dict[str, FrameOp] = {
    "crop": op_crop,
    "resize": op_resize,
    "rotate": op_rotate,
    "flip": op_flip,
    "grayscale": op_grayscale,
    "threshold": op_threshold,
}

assert set(NATIVE_REGISTRY) == set(NATIVE_OP_NAMES)


def apply_frame_op(fn: FrameOp, media: MediaObject, options: Mapping[str, MetadataValue]) -> MediaObject:
    """Run a per-frame op across all frames; frames stay dimension-uniform.

    A failure on any video frame aborts the whole op, and the error names the
    offending frame so multi-frame failures are diagnosable.  Single-frame
    image errors pass through untouched.
    """
    tag_frames = media.kind is MediaKind.VIDEO
    out = []
    for i, frame in enumerate(media.frames):
        try:
            out.append(from_array(fn(to_array(frame), options)))
        except OperationError as exc:
            if tag_frames:
                raise OperationError(f"frame {i}: {exc}") from exc
            raise
    return media.with_frames(tuple(out))


def execute_native(op: OperationSpec, media: MediaObject) -> MediaObject:
    fn = NATIVE_REGISTRY.get(op.type)
    if fn is None:
        raise OperationError(f"unknown native operation {op.type!r}")
    return apply_frame_op(fn, media, op.options)
