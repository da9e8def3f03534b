/**
 * TCP front of the worker: accept connections, decode request frames,
 * run the named op, write response frames back on the same socket.
 *
 * Requests on one connection are handled sequentially in arrival order.
 * A response echoes the request's entity_id and nonce and carries either
 * the result payload plus its descriptor, or an "error" string.
 * Bytes that can never parse into a frame drop the connection.
 */

import * as net from "net";

import { encodeFrame, parseFrames, FrameHeader, Message } from "./framing";
import { OpError, RawMedia, REGISTRY, WorkerOp } from "./ops";

function errorResponse(request: FrameHeader, error: string): Buffer {
  return encodeFrame(
    {
      direction: "response",
      entity_id: request.entity_id,
      nonce: request.nonce,
      op_type: request.op_type,
      options: {},
      media: null,
      error,
    },
    Buffer.alloc(0),
  );
}

function respond(registry: Record<string, WorkerOp>, msg: Message): Buffer {
  const header = msg.header;
  const op = registry[header.op_type];
  if (op === undefined) {
    return errorResponse(header, `unknown operation '${header.op_type}'`);
  }
  if (header.media === null) {
    return errorResponse(header, "request carries no media descriptor");
  }
  let result: RawMedia;
  try {
    result = op({ desc: header.media, payload: msg.payload }, header.options);
  } catch (err) {
    if (err instanceof OpError) {
      return errorResponse(header, err.message);
    }
    return errorResponse(header, `internal: ${err}`);
  }
  return encodeFrame(
    {
      direction: "response",
      entity_id: header.entity_id,
      nonce: header.nonce,
      op_type: header.op_type,
      options: {},
      media: result.desc,
    },
    result.payload,
  );
}

export function createWorkerServer(registry: Record<string, WorkerOp> = REGISTRY): net.Server {
  return net.createServer((socket) => {
    const peer = `${socket.remoteAddress}:${socket.remotePort}`;
    let pending: Buffer = Buffer.alloc(0);
    socket.on("data", (chunk: Buffer) => {
      pending = pending.length === 0 ? chunk : Buffer.concat([pending, chunk]);
      try {
        pending = parseFrames(pending, (msg) => {
          if (msg.header.direction !== "request") {
            console.error(`[udf-worker] ${peer}: ignoring non-request frame`);
            return;
          }
          socket.write(respond(registry, msg));
        });
      } catch (err) {
        console.error(`[udf-worker] ${peer}: dropping connection: ${err}`);
        socket.destroy();
      }
    });
    socket.on("error", (err) => {
      console.error(`[udf-worker] ${peer}: socket error: ${err.message}`);
    });
  });
}
