/** Test-side protocol client: spawns the built service and talks to it. */

import { spawn, type ChildProcessByStdio } from "node:child_process";
import * as readline from "node:readline";
import type { Readable, Writable } from "node:stream";
import * as path from "node:path";
import { fileURLToPath } from "node:url";
import type { ExecResponse, Hello } from "../src/protocol.js";

const HERE = path.dirname(fileURLToPath(import.meta.url));
export const MAIN_JS = path.join(HERE, "..", "dist", "main.js");
export const REPO_ROOT = path.join(HERE, "..", "..");

export class OracleClient {
  private child: ChildProcessByStdio<Writable, Readable, null>;
  private lines: AsyncIterator<string>;
  readonly hello: Promise<Hello>;
  private counter = 0;

  constructor(env: Record<string, string> = {}) {
    this.child = spawn("node", [MAIN_JS], {
      stdio: ["pipe", "pipe", "ignore"],
      env: { ...process.env, ...env },
    });
    const rl = readline.createInterface({ input: this.child.stdout, crlfDelay: Infinity });
    this.lines = rl[Symbol.asyncIterator]();
    this.hello = this.nextLine().then((line) => JSON.parse(line) as Hello);
  }

  private async nextLine(): Promise<string> {
    const next = await this.lines.next();
    if (next.done) {
      throw new Error("service closed its stdout");
    }
    return next.value;
  }

  async sendRaw(line: string): Promise<ExecResponse> {
    this.child.stdin.write(line + "\n");
    return JSON.parse(await this.nextLine()) as ExecResponse;
  }

  async execute(source: string, argsLiteral: string, timeoutMs = 5000): Promise<ExecResponse> {
    await this.hello;
    this.counter += 1;
    return this.sendRaw(
      JSON.stringify({
        id: `t${this.counter}`,
        source,
        args_literal: argsLiteral,
        timeout_ms: timeoutMs,
      }),
    );
  }

  close(): void {
    this.child.stdin.end();
    this.child.kill("SIGKILL");
  }
}

export const EXAMPLE_SOURCE = [
  "def f(x):",
  "    arr = [0, 0, 0, 0]",
  "    arr[0] = x - 43",
  "    arr[2] = x - 65",
  "    arr[1] = x + 88",
  "    arr[3] = x - 74",
  "    return arr",
].join("\n");
