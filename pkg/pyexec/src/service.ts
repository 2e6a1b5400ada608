/**
 * The stdio session: hello line, then one response line per request line,
 * in order. Malformed lines get an error response and the session keeps
 * serving.
 */

import * as readline from "node:readline";
import type { Readable, Writable } from "node:stream";
import { helloLine, parseRequest, RequestParseError, type ExecResponse } from "./protocol.js";
import { WorkerPool } from "./pool.js";

export interface ServeOptions {
  poolSize?: number;
  pythonBin?: string;
}

export async function serve(
  input: Readable,
  output: Writable,
  options: ServeOptions = {},
): Promise<void> {
  const pool = new WorkerPool(options.poolSize ?? 2, options.pythonBin);
  output.write(helloLine() + "\n");
  const lines = readline.createInterface({ input, crlfDelay: Infinity });
  try {
    for await (const line of lines) {
      if (!line.trim()) {
        continue;
      }
      let response: ExecResponse;
      try {
        const request = parseRequest(line);
        response = await pool.execute(request);
      } catch (err) {
        if (err instanceof RequestParseError) {
          response = { id: "", status: "error", error_kind: "BadRequest", message: err.message };
        } else {
          response = { id: "", status: "error", error_kind: "Internal", message: String(err) };
        }
      }
      output.write(JSON.stringify(response) + "\n");
    }
  } finally {
    await pool.close();
  }
}
