/**
 * Small pool of Python workers with transparent replacement.
 *
 * Requests are dispatched round-robin; a worker that times out or dies is
 * killed and replaced without surfacing anything to the caller beyond the
 * per-request status, so one poisoned request never takes the session down.
 */

import type { ExecRequest, ExecResponse } from "./protocol.js";
import { PythonWorker } from "./worker.js";

export class WorkerPool {
  private workers: PythonWorker[] = [];
  private cursor = 0;

  constructor(private readonly size = 2, private readonly pythonBin?: string) {
    if (size < 1) {
      throw new Error("pool size must be >= 1");
    }
  }

  private async checkout(): Promise<PythonWorker> {
    while (this.workers.length < this.size) {
      const worker = new PythonWorker(this.pythonBin);
      await worker.ready;
      this.workers.push(worker);
    }
    this.cursor = (this.cursor + 1) % this.workers.length;
    let worker = this.workers[this.cursor];
    if (!worker.alive) {
      worker = new PythonWorker(this.pythonBin);
      await worker.ready;
      this.workers[this.cursor] = worker;
    }
    return worker;
  }

  async execute(request: ExecRequest): Promise<ExecResponse> {
    const worker = await this.checkout();
    const response = await worker.execute(request);
    if (!worker.alive) {
      // replaced lazily on the next checkout; nothing to await here
      void worker.kill();
    }
    return response;
  }

  async close(): Promise<void> {
    await Promise.all(this.workers.map((w) => w.kill()));
    this.workers = [];
  }
}
