/**
 * One pooled Python worker process.
 *
 * The worker runs a small harness (embedded below) that executes one
 * function definition per request in a fresh namespace, inside a jailed
 * working directory with network modules stubbed out, and answers with the
 * value's repr. Timeouts are enforced here with SIGKILL: a tight loop in
 * target code cannot be interrupted cooperatively, so the whole process
 * dies and the pool replaces it.
 */

import { spawn, type ChildProcessByStdio } from "node:child_process";
import type { Readable, Writable } from "node:stream";
import { once } from "node:events";
import type { ExecRequest, ExecResponse } from "./protocol.js";

/** Python-side harness; stdout is reserved for protocol lines. */
const HARNESS = `
import ast, contextlib, io, json, os, sys, tempfile, types

class _BlockedModule(types.ModuleType):
    def __getattr__(self, name):
        raise RuntimeError("network access is disabled in the execution sandbox")

for _name in ("socket", "_socket", "ssl", "http.client", "urllib.request",
              "ftplib", "smtplib", "poplib", "imaplib", "telnetlib"):
    sys.modules[_name] = _BlockedModule(_name)

_jail = tempfile.mkdtemp(prefix="pyexec-jail-")
os.chdir(_jail)

print(json.dumps({"type": "ready"}), flush=True)

def _respond(payload):
    print(json.dumps(payload), flush=True)

for _line in sys.stdin:
    _line = _line.strip()
    if not _line:
        continue
    try:
        _req = json.loads(_line)
        _rid = _req["id"]
        _source = _req["source"]
        _args_literal = _req["args_literal"]
    except Exception as _exc:
        _respond({"id": "", "status": "error", "error_kind": "BadRequest", "message": str(_exc)[:300]})
        continue
    try:
        _namespace = {}
        _trap = io.StringIO()
        with contextlib.redirect_stdout(_trap):
            exec(compile(_source, "<target>", "exec"), _namespace)
            _fn = _namespace.get("f")
            if not isinstance(_fn, types.FunctionType):
                _fns = [v for v in _namespace.values() if isinstance(v, types.FunctionType)]
                if len(_fns) != 1:
                    raise NameError("source must define exactly one top-level function f")
                _fn = _fns[0]
            _args = ast.literal_eval("(" + _args_literal + ",)")
            _value = _fn(*_args)
        _respond({"id": _rid, "status": "ok", "value_literal": repr(_value)})
    except BaseException as _exc:
        _respond({"id": _rid, "status": "error", "error_kind": type(_exc).__name__,
                  "message": str(_exc)[:500]})
`;

export class WorkerDiedError extends Error {}

export class PythonWorker {
  private child: ChildProcessByStdio<Writable, Readable, null>;
  private buffer = "";
  private lineWaiter: ((line: string | null) => void) | null = null;
  private queuedLines: string[] = [];
  private exited = false;
  readonly ready: Promise<void>;

  constructor(pythonBin = process.env.PYEXEC_PYTHON ?? "python3") {
    this.child = spawn(pythonBin, ["-u", "-c", HARNESS], {
      stdio: ["pipe", "pipe", "ignore"],
    });
    this.child.stdout.setEncoding("utf8");
    this.child.stdout.on("data", (chunk: string) => this.onData(chunk));
    this.child.on("exit", () => {
      this.exited = true;
      this.lineWaiter?.(null);
      this.lineWaiter = null;
    });
    this.ready = this.awaitReady();
  }

  private async awaitReady(): Promise<void> {
    const line = await this.nextLine(10_000);
    if (line === null) {
      throw new WorkerDiedError("python worker did not start");
    }
    const record = JSON.parse(line) as { type?: string };
    if (record.type !== "ready") {
      throw new WorkerDiedError(`unexpected worker banner: ${line}`);
    }
  }

  private onData(chunk: string): void {
    this.buffer += chunk;
    let index: number;
    while ((index = this.buffer.indexOf("\n")) >= 0) {
      const line = this.buffer.slice(0, index);
      this.buffer = this.buffer.slice(index + 1);
      if (this.lineWaiter) {
        const waiter = this.lineWaiter;
        this.lineWaiter = null;
        waiter(line);
      } else {
        this.queuedLines.push(line);
      }
    }
  }

  private nextLine(timeoutMs: number): Promise<string | null> {
    if (this.queuedLines.length > 0) {
      return Promise.resolve(this.queuedLines.shift()!);
    }
    if (this.exited) {
      return Promise.resolve(null);
    }
    return new Promise((resolve) => {
      const timer = setTimeout(() => {
        if (this.lineWaiter === waiter) {
          this.lineWaiter = null;
        }
        resolve(null);
      }, timeoutMs);
      const waiter = (line: string | null) => {
        clearTimeout(timer);
        resolve(line);
      };
      this.lineWaiter = waiter;
    });
  }

  get alive(): boolean {
    return !this.exited;
  }

  /**
   * Run one request. Returns a timeout response (and leaves the worker
   * dead) when the budget elapses; the pool is responsible for replacement.
   */
  async execute(request: ExecRequest): Promise<ExecResponse> {
    if (this.exited) {
      return { id: request.id, status: "error", error_kind: "WorkerDied", message: "worker process has exited" };
    }
    const payload = JSON.stringify({
      id: request.id,
      source: request.source,
      args_literal: request.args_literal,
    });
    try {
      this.child.stdin.write(payload + "\n");
    } catch {
      return { id: request.id, status: "error", error_kind: "WorkerDied", message: "stdin write failed" };
    }
    const line = await this.nextLine(request.timeout_ms);
    if (line === null) {
      await this.kill();
      return {
        id: request.id,
        status: this.exitedBeforeTimeout() ? "error" : "timeout",
        error_kind: this.exitedBeforeTimeout() ? "WorkerDied" : undefined,
        message: "no response within the time budget",
      };
    }
    try {
      const record = JSON.parse(line) as ExecResponse;
      return { ...record, id: request.id };
    } catch {
      await this.kill();
      return { id: request.id, status: "error", error_kind: "ProtocolError", message: "worker emitted a non-JSON line" };
    }
  }

  private exitedBeforeTimeout(): boolean {
    return this.exited && this.child.exitCode !== null && this.child.signalCode === null;
  }

  async kill(): Promise<void> {
    if (!this.exited) {
      this.child.kill("SIGKILL");
      await once(this.child, "exit").catch(() => undefined);
      this.exited = true;
    }
  }
}
