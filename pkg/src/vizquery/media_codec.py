"""Byte-level media encoding: PNG for images, the RVID container for videos.

RVID layout (all integers big-endian u32):

    "RVID" | width | height | channels | frame_count | fps_num | fps_den
    followed by frame_count raw frames, each width*height*channels bytes,
    row-major, channels interleaved.
"""

from __future__ import annotations

import io
import struct
from fractions import Fraction
from typing import Any, Mapping

from PIL import Image

from .model import MediaKind, MediaObject, PixelImage

PNG_MAGIC = b"\x89PNG\r\n\x1a\n"
RVID_MAGIC = b"RVID"
_RVID_HEADER = struct.Struct(">4sIIIIII")

IMAGE_CONTENT_TYPE = "image/png"
VIDEO_CONTENT_TYPE = "application/x-rvid"


class MediaCodecError(ValueError):
    pass


def encode_image(frame: PixelImage) -> bytes:
    mode = "L" if frame.channels == 1 else "RGB"
    img = Image.frombytes(mode, (frame.width, frame.height), frame.data)
    buf = io.BytesIO()
    img.save(buf, format="PNG")
    return buf.getvalue()


def decode_image(data: bytes) -> PixelImage:
    try:
        img = Image.open(io.BytesIO(data))
        img.load()
    except Exception as exc:
        raise MediaCodecError(f"not a decodable image: {exc}") from exc
    if img.mode != "L":
        img = img.convert("RGB")
    channels = 1 if img.mode == "L" else 3
    return PixelImage(img.width, img.height, channels, img.tobytes())


def encode_video(media: MediaObject) -> bytes:
    assert media.kind is MediaKind.VIDEO and media.fps is not None
    header = _RVID_HEADER.pack(
        RVID_MAGIC,
        media.width,
        media.height,
        media.channels,
        len(media.frames),
        media.fps.numerator,
        media.fps.denominator,
    )
    return header + b"".join(f.data for f in media.frames)


def decode_video(data: bytes) -> MediaObject:
    if len(data) < _RVID_HEADER.size:
        raise MediaCodecError("video container truncated before header end")
    magic, width, height, channels, frame_count, fps_num, fps_den = _RVID_HEADER.unpack_from(data)
    if magic != RVID_MAGIC:
        raise MediaCodecError("bad video container magic")
    if fps_den == 0 or fps_num == 0:
        raise MediaCodecError("video fps must be a positive rational")
    if frame_count == 0:
        raise MediaCodecError("video must contain at least one frame")
    frame_size = width * height * channels
    expected = _RVID_HEADER.size + frame_size * frame_count
    if len(data) != expected:
        raise MediaCodecError(f"video payload holds {len(data)} bytes, expected {expected}")
    frames = []
    offset = _RVID_HEADER.size
    for _ in range(frame_count):
        frames.append(PixelImage(width, height, channels, data[offset : offset + frame_size]))
        offset += frame_size
    return MediaObject.video(frames, fps=Fraction(fps_num, fps_den))


def encode_media(media: MediaObject) -> bytes:
    if media.kind is MediaKind.IMAGE:
        return encode_image(media.frames[0])
    return encode_video(media)


def decode_media(data: bytes, hints: Mapping[str, str] | None = None) -> MediaObject:
    """Sniff the container magic and decode; ``hints`` ride along undecoded."""
    if data.startswith(RVID_MAGIC):
        media = decode_video(data)
        return MediaObject.video(media.frames, fps=media.fps, hints=hints) if hints else media
    if data.startswith(PNG_MAGIC):
        return MediaObject.image(decode_image(data), hints=hints)
    raise MediaCodecError("unrecognized media container")


def content_type_for(media: MediaObject) -> str:
    return IMAGE_CONTENT_TYPE if media.kind is MediaKind.IMAGE else VIDEO_CONTENT_TYPE


def media_descriptor(media: MediaObject) -> dict[str, Any]:
    """Compact JSON summary sent alongside encoded media bytes."""
    doc: dict[str, Any] = {
        "kind": media.kind.value,
        "width": media.width,
        "height": media.height,
        "channels": media.channels,
        "frame_count": len(media.frames),
    }
    if media.kind is MediaKind.VIDEO:
        assert media.fps is not None
        doc["fps_numerator"] = media.fps.numerator
        doc["fps_denominator"] = media.fps.denominator
    if media.hints:
        doc["hints"] = dict(media.hints)
    return doc


def hints_from_descriptor(desc: Mapping[str, Any]) -> dict[str, str]:
    hints = desc.get("hints", {})
    if not isinstance(hints, Mapping):
        return {}
    return {str(k): str(v) for k, v in hints.items()}


def raw_frames_payload(media: MediaObject) -> bytes:
    """Frames as bare concatenated pixel bytes; shape comes from the descriptor."""
    return b"".join(f.data for f in media.frames)


def media_from_raw(desc: Mapping[str, Any], payload: bytes) -> MediaObject:
    """Rebuild a MediaObject from a descriptor plus raw frame bytes."""
    try:
        kind = MediaKind(desc["kind"])
        width, height, channels = int(desc["width"]), int(desc["height"]), int(desc["channels"])
        frame_count = int(desc["frame_count"])
    except (KeyError, ValueError, TypeError) as exc:
        raise MediaCodecError(f"bad media descriptor: {exc}") from exc
    frame_size = width * height * channels
    if frame_count < 1 or len(payload) != frame_size * frame_count:
        raise MediaCodecError(
            f"payload holds {len(payload)} bytes, expected {frame_size * frame_count} "
            f"for {frame_count} frames of {width}x{height}x{channels}"
        )
    frames = [
        PixelImage(width, height, channels, payload[i * frame_size : (i + 1) * frame_size])
        for i in range(frame_count)
    ]
    hints = hints_from_descriptor(desc) or None
    if kind is MediaKind.IMAGE:
        if frame_count != 1:
            raise MediaCodecError("an image descriptor must carry exactly one frame")
        return MediaObject.image(frames[0], hints=hints)
    try:
        fps = Fraction(int(desc["fps_numerator"]), int(desc["fps_denominator"]))
    except (KeyError, ValueError, TypeError, ZeroDivisionError) as exc:
        raise MediaCodecError(f"bad video fps in descriptor: {exc}") from exc
    return MediaObject.video(frames, fps=fps, hints=hints)
