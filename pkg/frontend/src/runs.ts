import { readdirSync, existsSync } from "node:fs";
import { join } from "node:path";

import { column, readCsv, CsvTable, METRICS_SCHEMA, SUMMARY_SCHEMA } from "./csv.js";
import { band, mean } from "./stats.js";

/** One training run directory, named <env>__<grade>__<method>. */
export interface RunDir {
  dir: string;
  env: string;
  grade: string;
  method: string;
}

export interface Curve {
  iteration: number[];
  mu: number[];
  band: number[];
}

export interface RunData extends RunDir {
  summary: Curve;
  /** Per-iteration gap aggregated over the per-seed metrics files; null when
   * metrics were not requested or the run logs no finite gap (e.g. bc). */
  gapCurve: Curve | null;
}

export function parseRunName(name: string): Omit<RunDir, "dir"> | null {
  const parts = name.split("__");
  if (parts.length !== 3 || parts.some((p) => p === "")) return null;
  return { env: parts[0], grade: parts[1], method: parts[2] };
}

/** Expert share of a corruption grade: "mixed-p0.35" -> 0.35. */
export function mixedP(grade: string): number | null {
  const match = grade.match(/^mixed-p(\d+(?:\.\d+)?)$/);
  if (!match) return null;
  const p = Number(match[1]);
  return p >= 0 && p <= 1 ? p : null;
}

/** Sort key placing grades on the quality spectrum, best data first:
 * expert, medium, replay, mixed by descending expert share, random. */
export function gradeKey(grade: string): [number, number, string] {
  const fixed: Record<string, number> = { expert: 0, medium: 1, replay: 2, random: 4 };
  if (grade in fixed) return [fixed[grade], 0, grade];
  const p = mixedP(grade);
  if (p !== null) return [3, 1 - p, grade];
  return [5, 0, grade];
}

export function orderGrades(grades: string[]): string[] {
  const unique = [...new Set(grades)];
  return unique.sort((a, b) => {
    const ka = gradeKey(a);
    const kb = gradeKey(b);
    if (ka[0] !== kb[0]) return ka[0] - kb[0];
    if (ka[1] !== kb[1]) return ka[1] - kb[1];
    return ka[2] < kb[2] ? -1 : ka[2] > kb[2] ? 1 : 0;
  });
}

/** Subdirectories of root that carry a run name and a summary.csv. */
export function discoverRuns(root: string): RunDir[] {
  const out: RunDir[] = [];
  for (const entry of readdirSync(root, { withFileTypes: true })) {
    if (!entry.isDirectory()) continue;
    const parsed = parseRunName(entry.name);
    if (parsed === null) continue;
    const dir = join(root, entry.name);
    if (!existsSync(join(dir, "summary.csv"))) continue;
    out.push({ dir, ...parsed });
  }
  if (out.length === 0) {
    throw new Error(`no run directories with a summary.csv under ${root}`);
  }
  return out.sort((a, b) => (a.dir < b.dir ? -1 : 1));
}

function readSummary(dir: string): Curve {
  const table = readCsv(join(dir, "summary.csv"), SUMMARY_SCHEMA);
  return {
    iteration: column(table, "iteration"),
    mu: column(table, "ret_mu"),
    band: column(table, "ret_band"),
  };
}

function aggregateGap(tables: CsvTable[]): Curve | null {
  const perSeed = tables.map((t) => ({
    iteration: column(t, "iteration"),
    gap: column(t, "gap"),
  }));
  const grid = perSeed[0].iteration;
  const curve: Curve = { iteration: [], mu: [], band: [] };
  for (let i = 0; i < grid.length; i++) {
    const values = perSeed
      .map((s) => s.gap[s.iteration.indexOf(grid[i])])
      .filter((g) => g !== undefined && Number.isFinite(g));
    if (values.length === 0) continue;
    curve.iteration.push(grid[i]);
    curve.mu.push(mean(values));
    curve.band.push(band(values));
  }
  return curve.iteration.length > 0 ? curve : null;
}

export function loadRun(run: RunDir, withMetrics = false): RunData {
  const data: RunData = { ...run, summary: readSummary(run.dir), gapCurve: null };
  if (withMetrics) {
    const files = readdirSync(run.dir)
      .filter((f) => /^metrics_seed-?\d+\.csv$/.test(f))
      .sort();
    if (files.length > 0) {
      const tables = files.map((f) => readCsv(join(run.dir, f), METRICS_SCHEMA));
      data.gapCurve = aggregateGap(tables);
    }
  }
  return data;
}
