"""Compute-heavy operations served by worker processes.

Detection-style steps use a deterministic stand-in for an ML model: the
"detected" region of a frame is the tight bounding box of all pixels whose
luminance strictly exceeds a threshold (default 200). That keeps every op a
pure function of pixels and options, so results can be replayed bit-for-bit
anywhere. The registry also re-exports every native op so any step can be
pushed to a worker unchanged.
"""

from __future__ import annotations

import functools
from fractions import Fraction
from typing import Callable, Mapping

import numpy as np

from .font5x7 import GLYPH_ADVANCE, GLYPH_HEIGHT, glyph_columns
from .model import MediaKind, MediaObject
from .native_ops import (
    NATIVE_REGISTRY,
    OperationError,
    _int_option,
    _number_option,
    apply_frame_op,
    from_array,
    luma_u8,
    op_crop,
    op_resize,
    quantize_u8,
    round_half_up,
    to_array,
)

DEFAULT_LUMA_THRESHOLD = 200
DEFAULT_BOX_THICKNESS = 2

WorkerOp = Callable[[MediaObject, Mapping], MediaObject]


def frame_luma(arr: np.ndarray) -> np.ndarray:
    if arr.shape[2] == 1:
        return arr[:, :, 0]
    return luma_u8(arr[:, :, 0], arr[:, :, 1], arr[:, :, 2])


def detect_box(arr: np.ndarray, luma_threshold: int = DEFAULT_LUMA_THRESHOLD) -> tuple[int, int, int, int]:
    """Tight bounding box (x, y, w, h) of pixels brighter than the threshold.

    Returns the degenerate (0, 0, 0, 0) when no pixel qualifies.
    """
    bright = frame_luma(arr) > luma_threshold
    ys, xs = np.nonzero(bright)
    if xs.size == 0:
        return (0, 0, 0, 0)
    x0, x1 = int(xs.min()), int(xs.max())
    y0, y1 = int(ys.min()), int(ys.max())
    return (x0, y0, x1 - x0 + 1, y1 - y0 + 1)


def box_center(box: tuple[int, int, int, int]) -> tuple[int, int]:
    # a pixel, not a midpoint: even extents pick the upper-left of the middle pair
    x, y, w, h = box
    return (x + (w - 1) // 2, y + (h - 1) // 2)


def _luma_threshold(options: Mapping) -> int:
    value = options.get("luma_threshold", DEFAULT_LUMA_THRESHOLD)
    if not isinstance(value, int) or isinstance(value, bool) or not 0 <= value <= 255:
        raise OperationError(f"luma_threshold must be an integer in 0..255, got {value!r}")
    return value


def _radius(options: Mapping, op: str) -> float:
    r = _number_option(options, "radius", op)
    if r < 0:
        raise OperationError(f"{op}: radius must be non-negative, got {r}")
    return r


def _disk(shape: tuple[int, ...], center: tuple[int, int], radius: float) -> np.ndarray:
    """Boolean mask of pixels within Euclidean distance radius of center."""
    h, w = shape[:2]
    cy, cx = center[1], center[0]
    yy, xx = np.ogrid[:h, :w]
    return (xx - cx) ** 2 + (yy - cy) ** 2 <= radius * radius


def gaussian_kernel(size: int, sigma: float) -> np.ndarray:
    if sigma <= 0:
        sigma = 0.3 * ((size - 1) * 0.5 - 1) + 0.8
    center = (size - 1) / 2.0
    xs = np.arange(size, dtype=np.float64)
    weights = np.exp(-((xs - center) ** 2) / (2.0 * sigma * sigma))
    return weights / weights.sum()


def _blur_frame(arr: np.ndarray, options: Mapping) -> np.ndarray:
    kw = _int_option(options, "kernel_w", "gaussianblur")
    kh = _int_option(options, "kernel_h", "gaussianblur")
    for name, k in (("kernel_w", kw), ("kernel_h", kh)):
        if k < 1 or k % 2 == 0:
            raise OperationError(f"gaussianblur: {name} must be odd and positive, got {k}")
    sigma_x = _number_option(options, "sigmaX", "gaussianblur", default=0.0)
    sigma_y = _number_option(options, "sigmaY", "gaussianblur", default=0.0)
    if sigma_x < 0 or sigma_y < 0:
        raise OperationError("gaussianblur: sigma must be non-negative")

    kx = gaussian_kernel(kw, sigma_x)
    ky = gaussian_kernel(kh, sigma_y)
    acc = arr.astype(np.float64)
    h, w = arr.shape[:2]

    padded = np.pad(acc, ((0, 0), (kw // 2, kw // 2), (0, 0)), mode="edge")
    out = np.zeros_like(acc)
    for i in range(kw):
        out += padded[:, i : i + w, :] * kx[i]

    padded = np.pad(out, ((kh // 2, kh // 2), (0, 0), (0, 0)), mode="edge")
    out = np.zeros_like(acc)
    for i in range(kh):
        out += padded[i : i + h, :, :] * ky[i]
    return quantize_u8(out)


def _facedetect_box_frame(arr: np.ndarray, options: Mapping) -> np.ndarray:
    thickness = options.get("thickness", DEFAULT_BOX_THICKNESS)
    if not isinstance(thickness, int) or isinstance(thickness, bool) or thickness < 1:
        raise OperationError(f"facedetect_box: thickness must be a positive integer, got {thickness!r}")
    box = detect_box(arr, _luma_threshold(options))
    if box == (0, 0, 0, 0):
        return arr
    x, y, w, h = box
    fh, fw = arr.shape[:2]
    ring = np.zeros((fh, fw), dtype=bool)
    # the outline sits outside the detected region, clipped at frame edges
    ring[max(0, y - thickness) : min(fh, y + h + thickness), max(0, x - thickness) : min(fw, x + w + thickness)] = True
    ring[y : y + h, x : x + w] = False
    out = arr.copy()
    out[ring] = (255, 0, 0) if arr.shape[2] == 3 else 255
    return out


def _facedetect_mask_frame(arr: np.ndarray, options: Mapping) -> np.ndarray:
    radius = _radius(options, "facedetect_mask")
    box = detect_box(arr, _luma_threshold(options))
    if box == (0, 0, 0, 0):
        return arr
    out = arr.copy()
    out[_disk(arr.shape, box_center(box), radius)] = 0
    return out


def _manipulation_frame(arr: np.ndarray, options: Mapping) -> np.ndarray:
    radius = _radius(options, "manipulation")
    box = detect_box(arr, _luma_threshold(options))
    if box == (0, 0, 0, 0):
        return np.zeros_like(arr)
    out = arr.copy()
    out[~_disk(arr.shape, box_center(box), radius)] = 0
    return out


def _caption_frame(arr: np.ndarray, options: Mapping) -> np.ndarray:
    text = options.get("text")
    if not isinstance(text, str):
        raise OperationError(f"caption: text must be a string, got {text!r}")
    x = _int_option(options, "x", "caption")
    y = _int_option(options, "y", "caption")
    fh, fw = arr.shape[:2]
    if not (0 <= x < fw and 0 <= y < fh):
        raise OperationError(f"caption: anchor ({x},{y}) lies outside the {fw}x{fh} frame")
    if not text:
        return arr
    out = arr.copy()
    for index, ch in enumerate(text):
        try:
            columns = glyph_columns(ch)
        except KeyError:
            raise OperationError(f"caption: unsupported character {ch!r}") from None
        glyph_x = x + index * GLYPH_ADVANCE
        for col, bits in enumerate(columns):
            px = glyph_x + col
            if px >= fw:
                break
            for row in range(GLYPH_HEIGHT):
                if bits >> row & 1 and y + row < fh:
                    out[y + row, px] = 255
    return out


def _scale_factors(options: Mapping, op: str) -> tuple[float, float]:
    fx = _number_option(options, "X", op)
    fy = _number_option(options, "Y", op)
    if fx <= 0 or fy <= 0:
        raise OperationError(f"{op}: factors must be positive, got X={fx} Y={fy}")
    return fx, fy


def op_upsample(media: MediaObject, options: Mapping) -> MediaObject:
    fx, fy = _scale_factors(options, "upsample")
    target = {
        "width": max(1, round_half_up(media.width * fx)),
        "height": max(1, round_half_up(media.height * fy)),
    }
    return apply_frame_op(op_resize, media, target)


def op_downsample(media: MediaObject, options: Mapping) -> MediaObject:
    fx, fy = _scale_factors(options, "downsample")
    target = {
        "width": max(1, round_half_up(media.width / fx)),
        "height": max(1, round_half_up(media.height / fy)),
    }
    return apply_frame_op(op_resize, media, target)


def op_select(media: MediaObject, options: Mapping) -> MediaObject:
    if media.kind is not MediaKind.VIDEO:
        raise OperationError("select: input must be a video")
    t1 = _number_option(options, "t1", "select")
    t2 = _number_option(options, "t2", "select")
    if t1 < 0 or t1 >= t2:
        raise OperationError(f"select: need 0 <= t1 < t2, got t1={t1} t2={t2}")
    assert media.fps is not None
    # frame i covers timestamp i/fps; exact rational comparison, no float drift
    lo, hi = Fraction(t1), Fraction(t2)
    kept = [f for i, f in enumerate(media.frames) if lo <= Fraction(i) / media.fps < hi]
    if not kept:
        raise OperationError(f"select: no frames fall in [{t1}, {t2})")
    crop_opts = {k: options.get(k) for k in ("x", "y", "width", "height")}
    for k, v in crop_opts.items():
        if not isinstance(v, int) or isinstance(v, bool):
            raise OperationError(f"select: option {k!r} must be an integer, got {v!r}")
    frames = tuple(from_array(op_crop(to_array(f), crop_opts)) for f in kept)
    return MediaObject.video(frames, fps=media.fps, hints=media.hints)


def op_activity_label(media: MediaObject, options: Mapping) -> MediaObject:
    if media.kind is not MediaKind.VIDEO:
        raise OperationError("activity_label: input must be a video")
    labels = options.get("labels")
    if labels is not None:
        if not isinstance(labels, Mapping) or not all(
            isinstance(k, str) and isinstance(v, str) for k, v in labels.items()
        ):
            raise OperationError("activity_label: labels must map strings to strings")
    hint = media.hints.get("activity")
    if hint is not None:
        label = labels.get(hint, hint) if labels is not None else hint
    else:
        label = "unknown"
    if not label:
        return media
    return apply_frame_op(_caption_frame, media, {"text": label, "x": 0, "y": 0})


def _per_frame(fn) -> WorkerOp:
    return functools.partial(apply_frame_op, fn)


WORKER_REGISTRY: dict[str, WorkerOp] = {
    "gaussianblur": _per_frame(_blur_frame),
    "facedetect_box": _per_frame(_facedetect_box_frame),
    "facedetect_mask": _per_frame(_facedetect_mask_frame),
    "caption": _per_frame(_caption_frame),
    "manipulation": _per_frame(_manipulation_frame),
    "upsample": op_upsample,
    "downsample": op_downsample,
    "select": op_select,
    "activity_label": op_activity_label,
}
WORKER_REGISTRY.update({name: _per_frame(fn) for name in NATIVE_REGISTRY if (fn := NATIVE_REGISTRY[name])})


def execute_worker_op(name: str, media: MediaObject, options: Mapping) -> MediaObject:
    fn = WORKER_REGISTRY.get(name)
    if fn is None:
        raise OperationError(f"unknown operation {name!r}")
    return fn(media, options)
