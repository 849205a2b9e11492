import { mkdirSync, mkdtempSync, writeFileSync } from "node:fs";
import { tmpdir } from "node:os";
import { join } from "node:path";

export function summaryCsv(
  rows: Array<[number, number, number]>,
  schema = "giwr-summary-v1",
): string {
  return [
    `# schema: ${schema}`,
    "# band: 0.95 * population sigma of per-seed mean returns",
    "iteration,ret_mu,ret_band",
    ...rows.map((r) => r.join(",")),
  ].join("\n") + "\n";
}

export interface MetricsRow {
  it: number;
  ret: number;
  gap: number | "nan";
}

export function metricsCsv(seed: number, rows: MetricsRow[]): string {
  return [
    "# schema: giwr-metrics-v1",
    "# gap: best of 10 uniform actions minus dataset action, first main critic",
    "seed,iteration,return_mean,return_std,critic_loss,actor_loss,gap,wall_secs",
    ...rows.map((r) =>
      [seed, r.it, r.ret, 0.5, 0.1, 0.2, r.gap, 1.25].join(",")),
  ].join("\n") + "\n";
}

export function tempRoot(): string {
  return mkdtempSync(join(tmpdir(), "report-test-"));
}

/** Write one run directory with a summary and optional per-seed metrics. */
export function makeRun(
  root: string,
  name: string,
  summary: Array<[number, number, number]>,
  metricsBySeed?: Record<number, MetricsRow[]>,
): string {
  const dir = join(root, name);
  mkdirSync(dir, { recursive: true });
  writeFileSync(join(dir, "summary.csv"), summaryCsv(summary));
  for (const [seed, rows] of Object.entries(metricsBySeed ?? {})) {
    writeFileSync(join(dir, `metrics_seed${seed}.csv`),
                  metricsCsv(Number(seed), rows));
  }
  return dir;
}
