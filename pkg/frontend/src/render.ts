/**
 * Figure rendering: one SVG file per plot spec.
 *
 * Axis policy for convergence plots: log-y when every plotted value is
 * positive, symlog otherwise.  The statistics shown are recomputed by the
 * data layer (series.ts) purely for display; the harness owns the numbers.
 */

import * as fs from "node:fs";
import * as path from "node:path";
import { ablationBoxes, convergenceSeries, ecdfSeries } from "./series.js";
import { SchemaError } from "./schema.js";
import * as svg from "./svg.js";

export type PlotKind = "convergence" | "ecdf" | "ablation-box";

export interface PlotSpec {
  inputDir: string;
  kind: PlotKind;
  outputPath: string;
  logScale?: boolean;
  title?: string;
}

const plotX0 = svg.MARGIN.left;
const plotX1 = svg.WIDTH - svg.MARGIN.right;
const plotY0 = svg.HEIGHT - svg.MARGIN.bottom;
const plotY1 = svg.MARGIN.top;

function renderConvergence(spec: PlotSpec): string {
  const series = convergenceSeries(spec.inputDir);
  const allValues = series.flatMap((s) => [...s.lo, ...s.hi, ...s.mean]);
  const allPositive = allValues.every((v) => v > 0);
  const maxStep = Math.max(...series.map((s) => s.steps[s.steps.length - 1]));
  const xScale = svg.linearScale(0, maxStep, plotX0, plotX1);

  let yScale: svg.Scale;
  let yTicks: number[];
  let yFormat: ((v: number) => string) | undefined;
  if (allPositive && (spec.logScale ?? true)) {
    const lo = Math.min(...allValues);
    const hi = Math.max(...allValues);
    yScale = svg.logScale(lo, hi, plotY0, plotY1);
    yTicks = svg.decadeTicks(lo, hi);
    yFormat = (v) => v.toExponential(0);
  } else {
    // symlog keeps sign changes readable
    const t = 1e-8;
    const tr = svg.symlogTransform(t);
    const transformed = allValues.map(tr);
    const lin = svg.linearScale(Math.min(...transformed), Math.max(...transformed),
                                plotY0, plotY1);
    yScale = (v) => lin(tr(v));
    yTicks = svg.niceTicks(Math.min(...allValues), Math.max(...allValues));
  }

  const parts: string[] = [];
  series.forEach((s, i) => {
    const color = svg.PALETTE[i % svg.PALETTE.length];
    if (s.hasBand) {
      const upper = s.steps.map((x, j) => [xScale(x), yScale(s.hi[j])] as [number, number]);
      const lower = s.steps.map((x, j) => [xScale(x), yScale(Math.max(s.lo[j], 1e-300))] as [number, number]);
      parts.push(svg.bandPath(upper, lower, color));
    }
    const line = s.steps.map((x, j) => [xScale(x), yScale(s.mean[j])] as [number, number]);
    parts.push(svg.polyline(line, color));
  });
  parts.push(svg.chrome(spec.title ?? "Convergence (best-so-far)", "step",
                        "best fitness", { ticks: svg.niceTicks(0, maxStep) },
                        { ticks: yTicks, format: yFormat }, xScale, yScale));
  parts.push(svg.legend(series.map((s) => s.label),
                        series.map((_, i) => svg.PALETTE[i % svg.PALETTE.length])));
  return svg.document(parts.join("\n"));
}

function renderEcdf(spec: PlotSpec): string {
  const curve = ecdfSeries(spec.inputDir);
  const maxEval = Math.max(...curve.evals);
  const xScale = svg.linearScale(0, maxEval, plotX0, plotX1);
  const yScale = svg.linearScale(0, 1, plotY0, plotY1);
  // step function: hold each value until the next evaluation count
  const points: [number, number][] = [];
  for (let i = 0; i < curve.evals.length; i++) {
    if (i > 0) points.push([xScale(curve.evals[i]), yScale(curve.values[i - 1])]);
    points.push([xScale(curve.evals[i]), yScale(curve.values[i])]);
  }
  const parts: string[] = [];
  parts.push(svg.polyline(points, svg.PALETTE[0], 2));
  parts.push(svg.chrome(spec.title ?? `ECDF over ${curve.targets.length} targets`,
                        "evaluations", "fraction of (run, target) pairs solved",
                        { ticks: svg.niceTicks(0, maxEval) },
                        { ticks: [0, 0.25, 0.5, 0.75, 1] }, xScale, yScale));
  return svg.document(parts.join("\n"));
}

function renderAblationBox(spec: PlotSpec): string {
  const boxes = ablationBoxes(spec.inputDir);
  const values = boxes.flatMap((b) => b.values);
  const allPositive = values.every((v) => v > 0);
  const lo = Math.min(...values);
  const hi = Math.max(...values);
  const yScale = allPositive
    ? svg.logScale(lo, hi, plotY0, plotY1)
    : svg.linearScale(lo, hi, plotY0, plotY1);
  const yTicks = allPositive ? svg.decadeTicks(lo, hi) : svg.niceTicks(lo, hi);
  const slot = (plotX1 - plotX0) / boxes.length;
  const parts: string[] = [];
  boxes.forEach((b, i) => {
    const cx = plotX0 + slot * (i + 0.5);
    const half = Math.min(32, slot * 0.3);
    const color = svg.PALETTE[i % svg.PALETTE.length];
    const [yMin, yQ1, yMed, yQ3, yMax] =
      [b.min, b.q1, b.median, b.q3, b.max].map(yScale);
    parts.push(`<line x1="${cx}" y1="${yMin.toFixed(1)}" x2="${cx}" y2="${yMax.toFixed(1)}" stroke="${color}"/>`);
    parts.push(`<rect x="${(cx - half).toFixed(1)}" y="${yQ3.toFixed(1)}" width="${2 * half}" ` +
               `height="${(yQ1 - yQ3).toFixed(1)}" fill="${color}" fill-opacity="0.35" stroke="${color}"/>`);
    parts.push(`<line x1="${(cx - half).toFixed(1)}" y1="${yMed.toFixed(1)}" x2="${(cx + half).toFixed(1)}" y2="${yMed.toFixed(1)}" stroke="${color}" stroke-width="2"/>`);
    parts.push(svg.text(cx, plotY0 + 20, b.label, 11));
  });
  parts.push(svg.chrome(spec.title ?? "Final error by variant", "",
                        "final error", { ticks: [] },
                        { ticks: yTicks, format: allPositive ? (v) => v.toExponential(0) : undefined },
                        svg.linearScale(0, 1, plotX0, plotX1), yScale));
  return svg.document(parts.join("\n"));
}

export function render(spec: PlotSpec): string {
  let markup: string;
  switch (spec.kind) {
    case "convergence":
      markup = renderConvergence(spec);
      break;
    case "ecdf":
      markup = renderEcdf(spec);
      break;
    case "ablation-box":
      markup = renderAblationBox(spec);
      break;
    default:
      throw new SchemaError(`unknown plot kind ${String(spec.kind)}`);
  }
  fs.mkdirSync(path.dirname(path.resolve(spec.outputPath)), { recursive: true });
  fs.writeFileSync(spec.outputPath, markup);
  return spec.outputPath;
}
