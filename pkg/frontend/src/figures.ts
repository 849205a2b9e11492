import { mixedP, orderGrades, RunData, Curve } from "./runs.js";
import { ticks } from "./stats.js";
import { el, fmt, fmtLabel, linearScale, Scale, svgDoc, text } from "./svg.js";

export const KINDS = ["final-bars", "curves", "gap", "corruption"] as const;
export type FigureKind = (typeof KINDS)[number];

/** Fixed colors for the canonical method names so the same method looks the
 * same in every figure; anything else (sweep suffixes and so on) falls back
 * to a palette slot picked by a stable hash of the name. */
const METHOD_COLORS: Record<string, string> = {
  bc: "#8c8c8c",
  base: "#1f77b4",
  rtg: "#2ca02c",
  giwr: "#d62728",
};
const EXTRA_COLORS = ["#9467bd", "#8c564b", "#e377c2", "#17becf", "#bcbd22", "#ff7f0e"];

export function methodColor(method: string): string {
  if (method in METHOD_COLORS) return METHOD_COLORS[method];
  let h = 0;
  for (const ch of method) h = (h * 31 + ch.charCodeAt(0)) >>> 0;
  return EXTRA_COLORS[h % EXTRA_COLORS.length];
}

const METHOD_RANK: Record<string, number> = { bc: 0, base: 1, rtg: 2, giwr: 3 };

export function orderMethods(methods: string[]): string[] {
  return [...new Set(methods)].sort((a, b) => {
    const ra = METHOD_RANK[a] ?? 10;
    const rb = METHOD_RANK[b] ?? 10;
    if (ra !== rb) return ra - rb;
    return a < b ? -1 : a > b ? 1 : 0;
  });
}

const CELL_W = 240;
const CELL_H = 170;
const GAP_X = 16;
const GAP_Y = 30;
const PAD_LEFT = 74;
const PAD_TOP = 64;
const PAD_RIGHT = 18;
const PAD_BOTTOM = 40;
const CELL_INSET = 14;

function finalsOf(run: RunData): { mu: number; band: number } {
  const n = run.summary.iteration.length;
  if (n === 0) throw new Error(`${run.dir}: summary.csv has no data rows`);
  return { mu: run.summary.mu[n - 1], band: run.summary.band[n - 1] };
}

function padRange(lo: number, hi: number): [number, number] {
  const span = hi - lo || Math.abs(hi) || 1;
  return [lo - 0.06 * span, hi + 0.06 * span];
}

interface Grid {
  envs: string[];
  grades: string[];
  at(env: string, grade: string): RunData[];
  cellX(col: number): number;
  cellY(row: number): number;
  width: number;
  height: number;
}

function makeGrid(runs: RunData[]): Grid {
  const envs = [...new Set(runs.map((r) => r.env))].sort();
  const grades = orderGrades(runs.map((r) => r.grade));
  const byCell = new Map<string, RunData[]>();
  for (const run of runs) {
    const key = `${run.env}__${run.grade}`;
    if (!byCell.has(key)) byCell.set(key, []);
    byCell.get(key)!.push(run);
  }
  return {
    envs,
    grades,
    at: (env, grade) => {
      const found = byCell.get(`${env}__${grade}`) ?? [];
      return orderMethods(found.map((r) => r.method)).map(
        (m) => found.find((r) => r.method === m)!);
    },
    cellX: (col) => PAD_LEFT + col * (CELL_W + GAP_X),
    cellY: (row) => PAD_TOP + row * (CELL_H + GAP_Y),
    width: PAD_LEFT + grades.length * CELL_W + (grades.length - 1) * GAP_X + PAD_RIGHT,
    height: PAD_TOP + envs.length * CELL_H + (envs.length - 1) * GAP_Y + PAD_BOTTOM,
  };
}

function legend(runs: RunData[], x: number, y: number): string[] {
  const out: string[] = [];
  let cx = x;
  for (const method of orderMethods(runs.map((r) => r.method))) {
    out.push(el("rect", {
      x: cx, y: y - 9, width: 10, height: 10,
      fill: methodColor(method), class: "legend-swatch",
    }));
    out.push(text(cx + 14, y, method, { class: "legend-label" }));
    cx += 24 + method.length * 7;
  }
  return out;
}

function cellFrame(x: number, y: number, yScale: Scale, yTicks: number[],
                   withYLabels: boolean): string[] {
  const out: string[] = [];
  for (const t of yTicks) {
    const py = yScale(t);
    out.push(el("line", { x1: x, y1: py, x2: x + CELL_W, y2: py, class: "grid" }));
    if (withYLabels) {
      out.push(text(x - 6, py + 3, fmtLabel(t), { "text-anchor": "end", class: "ytick" }));
    }
  }
  out.push(el("rect", {
    x, y, width: CELL_W, height: CELL_H, fill: "none", stroke: "#888",
    "stroke-width": 1,
  }));
  return out;
}

function errorBar(px: number, lo: number, hi: number, halfWidth: number,
                  bandValue: number): string {
  const parts = [
    el("line", { x1: px, y1: lo, x2: px, y2: hi, stroke: "#222", "stroke-width": 1.2 }),
    el("line", { x1: px - halfWidth, y1: lo, x2: px + halfWidth, y2: lo, stroke: "#222", "stroke-width": 1.2 }),
    el("line", { x1: px - halfWidth, y1: hi, x2: px + halfWidth, y2: hi, stroke: "#222", "stroke-width": 1.2 }),
  ];
  return el("g", { class: "band", "data-band": fmtLabel(bandValue) }, parts);
}

function renderFinalBars(runs: RunData[]): string {
  const grid = makeGrid(runs);
  const body: string[] = [];
  body.push(text(PAD_LEFT, 20, "Final return by dataset grade", { class: "title" }));
  body.push(...legend(runs, PAD_LEFT, 38));

  grid.grades.forEach((grade, col) => {
    body.push(text(grid.cellX(col) + CELL_W / 2, PAD_TOP - 8, grade,
                   { "text-anchor": "middle", class: "col-title" }));
  });

  grid.envs.forEach((env, row) => {
    const y0 = grid.cellY(row);
    const rowRuns = grid.grades.flatMap((g) => grid.at(env, g));
    let lo = 0;
    let hi = 0;
    for (const run of rowRuns) {
      const f = finalsOf(run);
      lo = Math.min(lo, f.mu - f.band);
      hi = Math.max(hi, f.mu + f.band);
    }
    const [rlo, rhi] = padRange(lo, hi);
    const yScale = linearScale(rlo, rhi, y0 + CELL_H, y0);
    const yTicks = ticks(rlo, rhi, 3);
    body.push(text(14, y0 + CELL_H / 2, env, {
      class: "row-title",
      transform: `rotate(-90 14 ${Math.round(y0 + CELL_H / 2)})`,
      "text-anchor": "middle",
    }));

    grid.grades.forEach((grade, col) => {
      const x0 = grid.cellX(col);
      const cell = grid.at(env, grade);
      const parts = cellFrame(x0, y0, yScale, yTicks, col === 0);
      const innerW = CELL_W - 2 * CELL_INSET;
      const slot = cell.length > 0 ? innerW / cell.length : innerW;
      const barW = Math.min(46, slot * 0.62);
      cell.forEach((run, i) => {
        const f = finalsOf(run);
        const cxPos = x0 + CELL_INSET + slot * (i + 0.5);
        const yZero = yScale(Math.min(Math.max(0, rlo), rhi));
        const yVal = yScale(f.mu);
        parts.push(el("rect", {
          x: cxPos - barW / 2,
          y: Math.min(yZero, yVal),
          width: barW,
          height: Math.abs(yZero - yVal),
          fill: methodColor(run.method),
          class: "bar",
          "data-method": run.method,
          "data-grade": grade,
          "data-env": env,
        }));
        parts.push(errorBar(cxPos, yScale(f.mu - f.band), yScale(f.mu + f.band),
                            barW * 0.35, f.band));
      });
      body.push(el("g", { class: "cell", "data-env": env, "data-grade": grade }, parts));
    });
  });

  return svgDoc(grid.width, grid.height, body);
}

function curveElements(curve: Curve, xScale: Scale, yScale: Scale,
                       method: string): string[] {
  const out: string[] = [];
  const point = (it: number, value: number) =>
    `${fmt(xScale(it))},${fmt(yScale(value))}`;
  const upper = curve.iteration.map((it, i) => point(it, curve.mu[i] + curve.band[i]));
  const lower = curve.iteration.map((it, i) => point(it, curve.mu[i] - curve.band[i]));
  out.push(el("polygon", {
    points: [...upper, ...lower.reverse()].join(" "),
    fill: methodColor(method),
    "fill-opacity": 0.18,
    stroke: "none",
    class: "band-region",
    "data-method": method,
  }));
  out.push(el("polyline", {
    points: curve.iteration.map((it, i) => point(it, curve.mu[i])).join(" "),
    fill: "none",
    stroke: methodColor(method),
    "stroke-width": 1.6,
    class: "curve",
    "data-method": method,
  }));
  if (curve.iteration.length <= 25) {
    for (let i = 0; i < curve.iteration.length; i++) {
      out.push(el("circle", {
        cx: xScale(curve.iteration[i]), cy: yScale(curve.mu[i]), r: 2,
        fill: methodColor(method), class: "pt",
      }));
    }
  }
  return out;
}

function renderCurveGrid(runs: RunData[], title: string,
                         curveOf: (run: RunData) => Curve | null): string {
  const withCurve = runs.filter((r) => curveOf(r) !== null);
  if (withCurve.length === 0) {
    throw new Error(`${title}: no usable data in the selected runs`);
  }
  const grid = makeGrid(withCurve);
  const body: string[] = [];
  body.push(text(PAD_LEFT, 20, title, { class: "title" }));
  body.push(...legend(withCurve, PAD_LEFT, 38));
  grid.grades.forEach((grade, col) => {
    body.push(text(grid.cellX(col) + CELL_W / 2, PAD_TOP - 8, grade,
                   { "text-anchor": "middle", class: "col-title" }));
  });

  grid.envs.forEach((env, row) => {
    const y0 = grid.cellY(row);
    const rowCurves = grid.grades
      .flatMap((g) => grid.at(env, g))
      .map((r) => curveOf(r)!)
      .filter((c) => c !== null);
    let lo = Infinity;
    let hi = -Infinity;
    for (const curve of rowCurves) {
      for (let i = 0; i < curve.iteration.length; i++) {
        lo = Math.min(lo, curve.mu[i] - curve.band[i]);
        hi = Math.max(hi, curve.mu[i] + curve.band[i]);
      }
    }
    const [rlo, rhi] = padRange(lo, hi);
    const yScale = linearScale(rlo, rhi, y0 + CELL_H, y0);
    const yTicks = ticks(rlo, rhi, 3);
    body.push(text(14, y0 + CELL_H / 2, env, {
      class: "row-title",
      transform: `rotate(-90 14 ${Math.round(y0 + CELL_H / 2)})`,
      "text-anchor": "middle",
    }));

    grid.grades.forEach((grade, col) => {
      const x0 = grid.cellX(col);
      const parts = cellFrame(x0, y0, yScale, yTicks, col === 0);
      const curves = grid.at(env, grade)
        .map((run) => ({ run, curve: curveOf(run) }))
        .filter((c): c is { run: RunData; curve: Curve } => c.curve !== null);
      if (curves.length > 0) {
        const itLo = Math.min(...curves.map((c) => c.curve.iteration[0]));
        const itHi = Math.max(...curves.map((c) => c.curve.iteration[c.curve.iteration.length - 1]));
        const xScale = linearScale(itLo, itHi || 1, x0 + CELL_INSET, x0 + CELL_W - CELL_INSET);
        for (const { run, curve } of curves) {
          parts.push(...curveElements(curve, xScale, yScale, run.method));
        }
        if (row === grid.envs.length - 1) {
          for (const t of [itLo, itHi]) {
            parts.push(text(xScale(t), y0 + CELL_H + 14, fmtLabel(t),
                            { "text-anchor": "middle", class: "xtick" }));
          }
        }
      }
      body.push(el("g", { class: "cell", "data-env": env, "data-grade": grade }, parts));
    });
  });
  body.push(text(grid.width / 2, grid.height - 8, "iteration",
                 { "text-anchor": "middle", class: "xlabel" }));
  return svgDoc(grid.width, grid.height, body);
}

const PANEL_W = 460;
const PANEL_H = 250;

function renderCorruption(runs: RunData[]): string {
  const sweep = runs.filter((r) => mixedP(r.grade) !== null);
  if (sweep.length === 0) {
    throw new Error("corruption figure needs runs with mixed-p<share> grades");
  }
  const envs = [...new Set(sweep.map((r) => r.env))].sort();
  const width = PAD_LEFT + PANEL_W + PAD_RIGHT;
  const height = PAD_TOP + envs.length * PANEL_H + (envs.length - 1) * GAP_Y + PAD_BOTTOM;
  const body: string[] = [];
  body.push(text(PAD_LEFT, 20, "Final return vs expert share", { class: "title" }));
  body.push(...legend(sweep, PAD_LEFT, 38));

  envs.forEach((env, row) => {
    const y0 = PAD_TOP + row * (PANEL_H + GAP_Y);
    const panelRuns = sweep.filter((r) => r.env === env);
    const ps = [...new Set(panelRuns.map((r) => mixedP(r.grade)!))].sort((a, b) => a - b);
    let lo = Infinity;
    let hi = -Infinity;
    for (const run of panelRuns) {
      const f = finalsOf(run);
      lo = Math.min(lo, f.mu - f.band);
      hi = Math.max(hi, f.mu + f.band);
    }
    const [rlo, rhi] = padRange(lo, hi);
    const xScale = linearScale(0, 1, PAD_LEFT + CELL_INSET, PAD_LEFT + PANEL_W - CELL_INSET);
    const yScale = linearScale(rlo, rhi, y0 + PANEL_H, y0);
    const parts: string[] = [];
    for (const t of ticks(rlo, rhi, 4)) {
      parts.push(el("line", { x1: PAD_LEFT, y1: yScale(t), x2: PAD_LEFT + PANEL_W, y2: yScale(t), class: "grid" }));
      parts.push(text(PAD_LEFT - 6, yScale(t) + 3, fmtLabel(t), { "text-anchor": "end", class: "ytick" }));
    }
    parts.push(el("rect", { x: PAD_LEFT, y: y0, width: PANEL_W, height: PANEL_H, fill: "none", stroke: "#888", "stroke-width": 1 }));
    for (const p of ps) {
      parts.push(el("line", { x1: xScale(p), y1: y0 + PANEL_H, x2: xScale(p), y2: y0 + PANEL_H + 4, class: "axis" }));
      parts.push(text(xScale(p), y0 + PANEL_H + 16, fmtLabel(p), { "text-anchor": "middle", class: "xtick" }));
    }
    body.push(text(14, y0 + PANEL_H / 2, env, {
      class: "row-title",
      transform: `rotate(-90 14 ${Math.round(y0 + PANEL_H / 2)})`,
      "text-anchor": "middle",
    }));

    for (const method of orderMethods(panelRuns.map((r) => r.method))) {
      const line = panelRuns
        .filter((r) => r.method === method)
        .map((r) => ({ p: mixedP(r.grade)!, ...finalsOf(r) }))
        .sort((a, b) => a.p - b.p);
      const curve: Curve = {
        iteration: line.map((pt) => pt.p),
        mu: line.map((pt) => pt.mu),
        band: line.map((pt) => pt.band),
      };
      parts.push(...curveElements(curve, xScale, yScale, method));
    }
    body.push(el("g", { class: "panel", "data-env": env }, parts));
  });
  body.push(text(width / 2, height - 8, "p (expert share)",
                 { "text-anchor": "middle", class: "xlabel" }));
  return svgDoc(width, height, body);
}

export function render(kind: FigureKind, runs: RunData[]): string {
  if (runs.length === 0) throw new Error("no input runs");
  switch (kind) {
    case "final-bars":
      return renderFinalBars(runs);
    case "curves":
      return renderCurveGrid(runs, "Return during training", (run) => run.summary);
    case "gap":
      return renderCurveGrid(runs, "Action gap during training", (run) => run.gapCurve);
    case "corruption":
      return renderCorruption(runs);
  }
}
