#!/usr/bin/env node
/**
 * figures <kind> --runs <dir> --out <path>
 *
 * Renders one figure kind from a run directory to an SVG file. Unknown
 * kinds, bad flags, and input schema mismatches exit non-zero with the
 * offending name on stderr.
 */

import { realpathSync, writeFileSync } from "node:fs";
import { fileURLToPath } from "node:url";

import { RENDERERS } from "./figures.js";

export interface Io {
  out(line: string): void;
  err(line: string): void;
}

const KINDS = Object.keys(RENDERERS).sort();

function usage(io: Io): void {
  io.err(`usage: figures <kind> --runs <dir> --out <path>`);
  io.err(`kinds: ${KINDS.join(", ")}`);
}

export function run(argv: string[], io: Io): number {
  if (argv.length === 0 || argv[0] === "-h" || argv[0] === "--help") {
    usage(io);
    return argv.length === 0 ? 2 : 0;
  }
  const kind = argv[0];
  const renderer = RENDERERS[kind];
  if (!renderer) {
    io.err(`unknown figure kind: ${kind}`);
    usage(io);
    return 2;
  }
  let runsDir: string | undefined;
  let outPath: string | undefined;
  for (let i = 1; i < argv.length; i++) {
    const arg = argv[i];
    if (arg === "--runs") {
      runsDir = argv[++i];
    } else if (arg === "--out") {
      outPath = argv[++i];
    } else {
      io.err(`unknown argument: ${arg}`);
      usage(io);
      return 2;
    }
  }
  if (!runsDir || !outPath) {
    io.err("both --runs and --out are required");
    usage(io);
    return 2;
  }
  let svg: string;
  try {
    svg = renderer(runsDir);
  } catch (err) {
    io.err(`figures ${kind}: ${(err as Error).message}`);
    return 1;
  }
  try {
    writeFileSync(outPath, svg, "utf-8");
  } catch (err) {
    io.err(`cannot write ${outPath}: ${(err as Error).message}`);
    return 1;
  }
  io.out(`wrote ${outPath}`);
  return 0;
}

function isMain(): boolean {
  if (process.argv[1] === undefined) return false;
  try {
    // realpath resolves the bin symlink npm installs for the entry point
    return realpathSync(process.argv[1]) === fileURLToPath(import.meta.url);
  } catch {
    return false;
  }
}

if (isMain()) {
  process.exit(
    run(process.argv.slice(2), {
      out: (l) => console.log(l),
      err: (l) => console.error(l),
    }),
  );
}
