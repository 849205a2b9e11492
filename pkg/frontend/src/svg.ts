/** Tiny SVG writer. Output is a pure function of the inputs (fixed number
 * formatting, no timestamps), so re-rendering the same data reproduces the
 * same bytes. */

export function esc(text: string): string {
  return text
    .replace(/&/g, "&amp;")
    .replace(/</g, "&lt;")
    .replace(/>/g, "&gt;")
    .replace(/"/g, "&quot;");
}

/** Fixed-width coordinate formatting keeps the documents stable and small. */
export function fmt(x: number): string {
  if (!Number.isFinite(x)) return "0";
  const rounded = Math.round(x * 100) / 100;
  return Object.is(rounded, -0) ? "0" : String(rounded);
}

/** Tick labels keep more precision than coordinates but drop noise digits. */
export function fmtLabel(x: number): string {
  if (!Number.isFinite(x)) return String(x);
  const compact = Number(x.toPrecision(6));
  return String(compact);
}

export function el(
  tag: string,
  attrs: Record<string, string | number>,
  children: string | string[] = "",
): string {
  const attrText = Object.entries(attrs)
    .map(([k, v]) => ` ${k}="${typeof v === "number" ? fmt(v) : esc(v)}"`)
    .join("");
  const body = Array.isArray(children) ? children.join("") : children;
  if (body === "") return `<${tag}${attrText}/>`;
  return `<${tag}${attrText}>${body}</${tag}>`;
}

export function text(
  x: number,
  y: number,
  content: string,
  attrs: Record<string, string | number> = {},
): string {
  return el("text", { x, y, ...attrs }, esc(content));
}

export function svgDoc(width: number, height: number, body: string[]): string {
  const style = [
    "text { font-family: Helvetica, Arial, sans-serif; font-size: 11px; fill: #222; }",
    ".title { font-size: 13px; font-weight: bold; }",
    ".axis { stroke: #444; stroke-width: 1; }",
    ".grid { stroke: #ddd; stroke-width: 0.5; }",
  ].join(" ");
  return [
    `<svg xmlns="http://www.w3.org/2000/svg" width="${fmt(width)}" height="${fmt(height)}" viewBox="0 0 ${fmt(width)} ${fmt(height)}">`,
    el("style", {}, style),
    el("rect", { x: 0, y: 0, width, height, fill: "#ffffff" }),
    ...body,
    "</svg>",
  ].join("\n");
}

/** Affine map from data space to pixel space. */
export interface Scale {
  (value: number): number;
  lo: number;
  hi: number;
}

export function linearScale(lo: number, hi: number, pxLo: number, pxHi: number): Scale {
  const span = hi - lo || 1;
  const scale = ((value: number) => pxLo + ((value - lo) / span) * (pxHi - pxLo)) as Scale;
  scale.lo = lo;
  scale.hi = hi;
  return scale;
}
