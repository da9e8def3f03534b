/**
 * The media operations this worker serves.
 *
 * Frames arrive as raw interleaved row-major bytes plus a shape descriptor;
 * results go back the same way. The pixel math here must land bit-for-bit on
 * the engine's native results — integer luma in exact thousandths, strict
 * bounds checks, captions painted at full brightness on every channel.
 */

import { MediaDescriptor } from "./framing";
import { GLYPH_ADVANCE, GLYPH_HEIGHT, glyphColumns } from "./font5x7";

export class OpError extends Error {}

export interface RawMedia {
  desc: MediaDescriptor;
  payload: Buffer;
}

export type WorkerOp = (media: RawMedia, options: Record<string, unknown>) => RawMedia;

function frameSize(desc: MediaDescriptor): number {
  return desc.width * desc.height * desc.channels;
}

/** Split the payload into per-frame views; validates the byte count. */
export function frames(media: RawMedia): Buffer[] {
  const { desc, payload } = media;
  const size = frameSize(desc);
  const expected = size * desc.frame_count;
  if (!Number.isInteger(size) || size <= 0 || desc.frame_count < 1) {
    throw new OpError(`bad media descriptor: ${desc.width}x${desc.height}x${desc.channels} x${desc.frame_count}`);
  }
  if (payload.length !== expected) {
    throw new OpError(`payload holds ${payload.length} bytes, expected ${expected}`);
  }
  const out: Buffer[] = [];
  for (let i = 0; i < desc.frame_count; i++) {
    out.push(payload.subarray(i * size, (i + 1) * size));
  }
  return out;
}

function perFrame(
  media: RawMedia,
  fn: (frame: Buffer, desc: MediaDescriptor) => Buffer,
  outShape?: Partial<MediaDescriptor>,
): RawMedia {
  const tagFrames = media.desc.kind === "video";
  const results: Buffer[] = [];
  for (const [i, frame] of frames(media).entries()) {
    try {
      results.push(fn(frame, media.desc));
    } catch (err) {
      if (tagFrames && err instanceof OpError) {
        throw new OpError(`frame ${i}: ${err.message}`);
      }
      throw err;
    }
  }
  return { desc: { ...media.desc, ...outShape }, payload: Buffer.concat(results) };
}

function intOption(options: Record<string, unknown>, key: string, op: string): number {
  if (!(key in options)) {
    throw new OpError(`${op}: missing option '${key}'`);
  }
  const value = options[key];
  if (typeof value !== "number" || !Number.isInteger(value)) {
    throw new OpError(`${op}: option '${key}' must be an integer, got ${JSON.stringify(value)}`);
  }
  return value;
}

/** floor((299R + 587G + 114B + 500) / 1000) — exact in integer thousandths. */
export function lumaU8(r: number, g: number, b: number): number {
  return Math.floor((299 * r + 587 * g + 114 * b + 500) / 1000);
}

function grayscaleFrame(frame: Buffer, desc: MediaDescriptor): Buffer {
  const pixels = desc.width * desc.height;
  const c = desc.channels;
  const out = Buffer.alloc(pixels);
  for (let p = 0; p < pixels; p++) {
    out[p] = lumaU8(frame[p * c], frame[p * c + 1], frame[p * c + 2]);
  }
  return out;
}

export function udfGrayscale(media: RawMedia, _options: Record<string, unknown>): RawMedia {
  if (media.desc.channels === 1) {
    frames(media); // still validate the byte count
    return media;
  }
  if (media.desc.channels < 3) {
    throw new OpError(`grayscale: unsupported channel count ${media.desc.channels}`);
  }
  return perFrame(media, grayscaleFrame, { channels: 1 });
}

function captionFrame(frame: Buffer, desc: MediaDescriptor, options: Record<string, unknown>): Buffer {
  const text = options.text;
  if (typeof text !== "string") {
    throw new OpError(`caption: text must be a string, got ${JSON.stringify(text)}`);
  }
  const x = intOption(options, "x", "caption");
  const y = intOption(options, "y", "caption");
  const { width: fw, height: fh, channels: c } = desc;
  if (!(0 <= x && x < fw && 0 <= y && y < fh)) {
    throw new OpError(`caption: anchor (${x},${y}) lies outside the ${fw}x${fh} frame`);
  }
  if (text === "") return frame;
  const out = Buffer.from(frame);
  for (let index = 0; index < text.length; index++) {
    const columns = glyphColumns(text[index]);
    if (columns === undefined) {
      throw new OpError(`caption: unsupported character ${JSON.stringify(text[index])}`);
    }
    const glyphX = x + index * GLYPH_ADVANCE;
    for (let col = 0; col < columns.length; col++) {
      const px = glyphX + col;
      if (px >= fw) break;
      for (let row = 0; row < GLYPH_HEIGHT; row++) {
        if ((columns[col] >> row) & 1 && y + row < fh) {
          out.fill(255, ((y + row) * fw + px) * c, ((y + row) * fw + px) * c + c);
        }
      }
    }
  }
  return out;
}

export function udfCaption(media: RawMedia, options: Record<string, unknown>): RawMedia {
  return perFrame(media, (frame, desc) => captionFrame(frame, desc, options));
}

export const REGISTRY: Record<string, WorkerOp> = {
  udf_grayscale: udfGrayscale,
  udf_caption: udfCaption,
};
