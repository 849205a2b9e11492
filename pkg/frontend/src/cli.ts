import { mkdirSync, realpathSync, writeFileSync } from "node:fs";
import { join } from "node:path";
import { parseArgs } from "node:util";
import { pathToFileURL } from "node:url";

import { FigureKind, KINDS, render } from "./figures.js";
import { discoverRuns, loadRun } from "./runs.js";

const USAGE = `usage: report --in <runs-dir> --kind <${KINDS.join("|")}> --out <dir>

Reads every <env>__<grade>__<method> run directory under --in and writes
<kind>.svg into --out.`;

export function main(argv: string[]): number {
  let values: { in?: string; kind?: string; out?: string };
  try {
    values = parseArgs({
      args: argv,
      options: {
        in: { type: "string" },
        kind: { type: "string" },
        out: { type: "string" },
      },
      allowPositionals: false,
    }).values;
  } catch (err) {
    console.error(`report: ${(err as Error).message}\n${USAGE}`);
    return 2;
  }

  const { in: inDir, kind, out } = values;
  if (!inDir || !kind || !out) {
    console.error(`report: --in, --kind and --out are all required\n${USAGE}`);
    return 2;
  }
  if (!(KINDS as readonly string[]).includes(kind)) {
    console.error(`report: unknown kind '${kind}'; expected one of ${KINDS.join(", ")}`);
    return 2;
  }

  try {
    const runs = discoverRuns(inDir).map((r) => loadRun(r, kind === "gap"));
    const svg = render(kind as FigureKind, runs);
    mkdirSync(out, { recursive: true });
    const file = join(out, `${kind}.svg`);
    writeFileSync(file, svg);
    console.log(file);
    return 0;
  } catch (err) {
    console.error(`report: ${(err as Error).message}`);
    return 1;
  }
}

function invokedDirectly(): boolean {
  if (!process.argv[1]) return false;
  try {
    return import.meta.url === pathToFileURL(realpathSync(process.argv[1])).href;
  } catch {
    return false;
  }
}

if (invokedDirectly()) {
  process.exit(main(process.argv.slice(2)));
}
