/**
 * Wire types for the interpreter-oracle protocol: one JSON object per line
 * over stdin/stdout, a hello line first, responses correlated by id.
 */

export const PROTOCOL_VERSION = 1;

export interface ExecRequest {
  id: string;
  source: string;
  args_literal: string;
  timeout_ms: number;
}

export type ExecStatus = "ok" | "error" | "timeout";

export interface ExecResponse {
  id: string;
  status: ExecStatus;
  value_literal?: string;
  error_kind?: string;
  message?: string;
}

export interface Hello {
  type: "hello";
  protocol: number;
  name: string;
  version: string;
}

export function helloLine(): string {
  const hello: Hello = {
    type: "hello",
    protocol: PROTOCOL_VERSION,
    name: "pyexec",
    version: "0.1.0",
  };
  return JSON.stringify(hello);
}

export class RequestParseError extends Error {}

const MAX_TIMEOUT_MS = 60_000;

/** Validate one request line; throws RequestParseError with the reason. */
export function parseRequest(line: string): ExecRequest {
  let raw: unknown;
  try {
    raw = JSON.parse(line);
  } catch (err) {
    throw new RequestParseError(`invalid JSON: ${(err as Error).message}`);
  }
  if (typeof raw !== "object" || raw === null || Array.isArray(raw)) {
    throw new RequestParseError("request must be a JSON object");
  }
  const record = raw as Record<string, unknown>;
  for (const field of ["id", "source", "args_literal"] as const) {
    if (typeof record[field] !== "string") {
      throw new RequestParseError(`field '${field}' must be a string`);
    }
  }
  let timeout = record["timeout_ms"];
  if (timeout === undefined) {
    timeout = 5000;
  }
  if (typeof timeout !== "number" || !Number.isFinite(timeout) || timeout < 1 || timeout > MAX_TIMEOUT_MS) {
    throw new RequestParseError(`field 'timeout_ms' must be a number in [1, ${MAX_TIMEOUT_MS}]`);
  }
  return {
    id: record["id"] as string,
    source: record["source"] as string,
    args_literal: record["args_literal"] as string,
    timeout_ms: timeout,
  };
}
