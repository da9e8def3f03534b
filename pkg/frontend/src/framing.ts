/**
 * Length-prefixed frame codec for the UDF worker channel.
 *
 * Wire format (big-endian throughout):
 *   [4 bytes uint32: header length]
 *   [header: UTF-8 JSON {"direction", "entity_id", "nonce", "op_type",
 *                        "options", "media", "error"?}]
 *   [4 bytes uint32: payload length]
 *   [payload: concatenated raw frames, row-major interleaved; dimensions
 *    come from the header's "media" descriptor]
 *
 * A response carries either a payload or an "error" string, never both.
 */

export const MAX_HEADER_BYTES = 1 << 20;
export const MAX_PAYLOAD_BYTES = 1 << 28;

/** Shape summary travelling alongside raw frame bytes. */
export interface MediaDescriptor {
  kind: "image" | "video";
  width: number;
  height: number;
  channels: number;
  frame_count: number;
  fps_numerator?: number;
  fps_denominator?: number;
  hints?: Record<string, string>;
}

export interface FrameHeader {
  direction: "request" | "response";
  entity_id: number;
  nonce: string;
  op_type: string;
  options: Record<string, unknown>;
  media: MediaDescriptor | null;
  error?: string;
}

export interface Message {
  header: FrameHeader;
  payload: Buffer;
}

export class FramingError extends Error {}

/** Serialize one message to its wire form. */
export function encodeFrame(header: FrameHeader, payload: Buffer): Buffer {
  const doc: Record<string, unknown> = {
    direction: header.direction,
    entity_id: header.entity_id,
    nonce: header.nonce,
    op_type: header.op_type,
    options: header.options,
    media: header.media,
  };
  if (header.error !== undefined) {
    doc.error = header.error;
  }
  const headerBytes = Buffer.from(JSON.stringify(doc), "utf-8");
  const headerLen = Buffer.alloc(4);
  headerLen.writeUInt32BE(headerBytes.length, 0);
  const payloadLen = Buffer.alloc(4);
  payloadLen.writeUInt32BE(payload.length, 0);
  return Buffer.concat([headerLen, headerBytes, payloadLen, payload]);
}

function parseHeader(bytes: Buffer): FrameHeader {
  let doc: Record<string, unknown>;
  try {
    doc = JSON.parse(bytes.toString("utf-8"));
  } catch (err) {
    throw new FramingError(`header is not JSON: ${err}`);
  }
  if (typeof doc !== "object" || doc === null || Array.isArray(doc)) {
    throw new FramingError("header is not a JSON object");
  }
  const direction = doc.direction;
  if (direction !== "request" && direction !== "response") {
    throw new FramingError(`bad direction ${JSON.stringify(direction)}`);
  }
  const entityId = doc.entity_id;
  if (typeof entityId !== "number" || !Number.isInteger(entityId)) {
    throw new FramingError(`bad entity_id ${JSON.stringify(entityId)}`);
  }
  if (typeof doc.nonce !== "string" || typeof doc.op_type !== "string") {
    throw new FramingError("header needs string nonce and op_type");
  }
  const options = doc.options ?? {};
  if (typeof options !== "object" || Array.isArray(options)) {
    throw new FramingError("options must be an object");
  }
  const header: FrameHeader = {
    direction,
    entity_id: entityId,
    nonce: doc.nonce,
    op_type: doc.op_type,
    options: options as Record<string, unknown>,
    media: (doc.media ?? null) as MediaDescriptor | null,
  };
  if (doc.error !== undefined && doc.error !== null) {
    if (typeof doc.error !== "string") {
      throw new FramingError("error must be a string");
    }
    header.error = doc.error;
  }
  return header;
}

/**
 * Parse complete frames from a stream buffer, calling `handler` for each.
 * Returns the remaining unparsed bytes (an incomplete trailing frame).
 * Throws FramingError on anything that can never become a valid frame;
 * the caller should drop the connection when that happens.
 */
export function parseFrames(pending: Buffer, handler: (msg: Message) => void): Buffer {
  while (pending.length >= 4) {
    const headerLen = pending.readUInt32BE(0);
    if (headerLen > MAX_HEADER_BYTES) {
      throw new FramingError(`header length ${headerLen} exceeds cap`);
    }
    if (pending.length < 4 + headerLen + 4) break;
    const payloadLen = pending.readUInt32BE(4 + headerLen);
    if (payloadLen > MAX_PAYLOAD_BYTES) {
      throw new FramingError(`payload length ${payloadLen} exceeds cap`);
    }
    const total = 4 + headerLen + 4 + payloadLen;
    if (pending.length < total) break;
    const header = parseHeader(pending.subarray(4, 4 + headerLen));
    const payload = pending.subarray(4 + headerLen + 4, total);
    pending = pending.subarray(total);
    handler({ header, payload });
  }
  return pending;
}
