/**
 * Minimal deterministic SVG chart builder.
 *
 * Fixed style, fixed palette, no timestamps or randomness anywhere: the
 * same inputs always produce the same markup.
 */

export const PALETTE = [
  "#c1272d",
  "#0000a7",
  "#008176",
  "#eecc16",
  "#b3b3b3",
  "#5e3c99",
];

export const WIDTH = 720;
export const HEIGHT = 440;
export const MARGIN = { top: 40, right: 24, bottom: 48, left: 72 };

export type Scale = (v: number) => number;

export function linearScale(d0: number, d1: number, r0: number, r1: number): Scale {
  const span = d1 - d0 || 1;
  return (v) => r0 + ((v - d0) / span) * (r1 - r0);
}

export function logScale(d0: number, d1: number, r0: number, r1: number): Scale {
  const l0 = Math.log10(d0);
  const l1 = Math.log10(d1);
  const span = l1 - l0 || 1;
  return (v) => r0 + ((Math.log10(v) - l0) / span) * (r1 - r0);
}

/** Symmetric log: linear inside [-t, t], logarithmic outside. */
export function symlogTransform(t: number): (v: number) => number {
  return (v) => {
    const a = Math.abs(v);
    return a <= t ? v / t : Math.sign(v) * (1 + Math.log10(a / t));
  };
}

const fmt = (v: number) => (Number.isInteger(v) ? String(v) : v.toPrecision(4));

export function polyline(points: [number, number][], stroke: string, width = 1.5,
                         dash = ""): string {
  const d = points.map(([x, y]) => `${x.toFixed(2)},${y.toFixed(2)}`).join(" ");
  const dashAttr = dash ? ` stroke-dasharray="${dash}"` : "";
  return `<polyline fill="none" stroke="${stroke}" stroke-width="${width}"${dashAttr} points="${d}"/>`;
}

export function bandPath(upper: [number, number][], lower: [number, number][],
                         fill: string): string {
  const pts = [...upper, ...[...lower].reverse()]
    .map(([x, y]) => `${x.toFixed(2)},${y.toFixed(2)}`)
    .join(" ");
  return `<polygon fill="${fill}" fill-opacity="0.18" stroke="none" points="${pts}"/>`;
}

export function text(x: number, y: number, content: string, size = 12,
                     anchor = "middle"): string {
  return `<text x="${x.toFixed(1)}" y="${y.toFixed(1)}" font-size="${size}" ` +
    `font-family="Helvetica,Arial,sans-serif" text-anchor="${anchor}">${escapeXml(content)}</text>`;
}

export function escapeXml(s: string): string {
  return s.replace(/&/g, "&amp;").replace(/</g, "&lt;").replace(/>/g, "&gt;");
}

export interface Axis {
  ticks: number[];
  format?: (v: number) => string;
}

export function chrome(title: string, xLabel: string, yLabel: string,
                       xAxis: Axis, yAxis: Axis, xScale: Scale, yScale: Scale): string {
  const parts: string[] = [];
  const x0 = MARGIN.left;
  const x1 = WIDTH - MARGIN.right;
  const y0 = HEIGHT - MARGIN.bottom;
  const y1 = MARGIN.top;
  parts.push(`<rect x="${x0}" y="${y1}" width="${x1 - x0}" height="${y0 - y1}" fill="none" stroke="#444" stroke-width="1"/>`);
  parts.push(text(WIDTH / 2, 22, title, 15));
  parts.push(text(WIDTH / 2, HEIGHT - 10, xLabel));
  parts.push(`<g transform="rotate(-90 16 ${HEIGHT / 2})">${text(16, HEIGHT / 2, yLabel)}</g>`);
  const xf = xAxis.format ?? fmt;
  for (const tick of xAxis.ticks) {
    const px = xScale(tick);
    parts.push(`<line x1="${px.toFixed(1)}" y1="${y0}" x2="${px.toFixed(1)}" y2="${y0 + 5}" stroke="#444"/>`);
    parts.push(text(px, y0 + 20, xf(tick), 11));
  }
  const yf = yAxis.format ?? fmt;
  for (const tick of yAxis.ticks) {
    const py = yScale(tick);
    parts.push(`<line x1="${x0 - 5}" y1="${py.toFixed(1)}" x2="${x0}" y2="${py.toFixed(1)}" stroke="#444"/>`);
    parts.push(`<line x1="${x0}" y1="${py.toFixed(1)}" x2="${x1}" y2="${py.toFixed(1)}" stroke="#ddd" stroke-width="0.5"/>`);
    parts.push(text(x0 - 9, py + 4, yf(tick), 11, "end"));
  }
  return parts.join("\n");
}

export function legend(labels: string[], colors: string[]): string {
  const parts: string[] = [];
  labels.forEach((label, i) => {
    const y = MARGIN.top + 16 + i * 18;
    const x = WIDTH - MARGIN.right - 150;
    parts.push(`<line x1="${x}" y1="${y - 4}" x2="${x + 24}" y2="${y - 4}" stroke="${colors[i]}" stroke-width="2"/>`);
    parts.push(text(x + 30, y, label, 11, "start"));
  });
  return parts.join("\n");
}

export function document(body: string): string {
  return `<?xml version="1.0" encoding="UTF-8"?>\n` +
    `<svg xmlns="http://www.w3.org/2000/svg" width="${WIDTH}" height="${HEIGHT}" ` +
    `viewBox="0 0 ${WIDTH} ${HEIGHT}">\n<rect width="100%" height="100%" fill="white"/>\n` +
    body + `\n</svg>\n`;
}

/** Round-number ticks covering [lo, hi]. */
export function niceTicks(lo: number, hi: number, n = 6): number[] {
  if (!(hi > lo)) return [lo];
  const rawStep = (hi - lo) / n;
  const mag = Math.pow(10, Math.floor(Math.log10(rawStep)));
  const candidates = [1, 2, 5, 10].map((m) => m * mag);
  const step = candidates.find((c) => (hi - lo) / c <= n) ?? candidates[3];
  const start = Math.ceil(lo / step) * step;
  const ticks: number[] = [];
  for (let v = start; v <= hi + 1e-12; v += step) ticks.push(Number(v.toPrecision(12)));
  return ticks;
}

/** Powers of ten covering [lo, hi] for log axes. */
export function decadeTicks(lo: number, hi: number): number[] {
  const ticks: number[] = [];
  for (let e = Math.floor(Math.log10(lo)); e <= Math.ceil(Math.log10(hi)); e++) {
    ticks.push(Math.pow(10, e));
  }
  return ticks;
}
