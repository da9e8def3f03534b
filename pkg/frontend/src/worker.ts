#!/usr/bin/env node
/**
 * CLI entry: `node dist/worker.js [--port N]` (default 5555).
 */

import { createWorkerServer } from "./server";

function parsePort(argv: string[]): number {
  let port = 5555;
  for (let i = 0; i < argv.length; i++) {
    const arg = argv[i];
    if (arg === "--port" && i + 1 < argv.length) {
      port = Number(argv[++i]);
    } else if (arg.startsWith("--port=")) {
      port = Number(arg.slice("--port=".length));
    } else {
      console.error(`usage: worker [--port N]  (got ${arg})`);
      process.exit(2);
    }
  }
  if (!Number.isInteger(port) || port < 0 || port > 65535) {
    console.error(`invalid port ${port}`);
    process.exit(2);
  }
  return port;
}

const port = parsePort(process.argv.slice(2));
const server = createWorkerServer();
server.on("error", (err) => {
  console.error(`[udf-worker] fatal: ${err.message}`);
  process.exit(1);
});
server.listen(port, () => {
  console.error(`[udf-worker] listening on port ${port}`);
});
