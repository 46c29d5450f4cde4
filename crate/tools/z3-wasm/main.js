// Reads an SMT-LIB v2 script from stdin, evaluates it with the z3 WebAssembly
// build, and prints the solver output (sat/unsat, get-value forms) to stdout.
// Accepts and ignores `-in` so it can be dropped in where a native `z3 -in`
// invocation is expected.
'use strict';

function readStdin() {
  return new Promise((resolve, reject) => {
    const chunks = [];
    process.stdin.on('data', (c) => chunks.push(c));
    process.stdin.on('end', () => resolve(Buffer.concat(chunks).toString('utf8')));
    process.stdin.on('error', reject);
  });
}

(async () => {
  const script = await readStdin();
  const { init } = require('z3-solver');
  const { Z3 } = await init();
  const ctx = Z3.mk_context(Z3.mk_config());
  try {
    const out = await Z3.eval_smtlib2_string(ctx, script);
    if (out.length > 0) process.stdout.write(out.endsWith('\n') ? out : out + '\n');
  } finally {
    Z3.del_context(ctx);
  }
  // The WASM worker pool keeps the event loop alive; exit explicitly.
  process.exit(0);
})().catch((e) => {
  process.stderr.write(`z3-wasm shim error: ${e && e.message ? e.message : e}\n`);
  process.exit(1);
});
