#!/usr/bin/env node
/** Entry point: serve the interpreter-oracle protocol over this process's stdio. */

import { serve } from "./service.js";

const poolSize = Number(process.env.PYEXEC_POOL_SIZE ?? "2");

serve(process.stdin, process.stdout, { poolSize }).catch((err) => {
  console.error("pyexec fatal:", err);
  process.exit(1);
});
