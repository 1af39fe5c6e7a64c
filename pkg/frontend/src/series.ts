/**
 * Data layer: turn run directories into plottable series.
 *
 * Everything displayed is re-derived here from the harness's files; these
 * functions are what the tests pin down (the SVG layer is presentation
 * only).
 */

import * as path from "node:path";
import {
  EcdfJson,
  RunRecord,
  SchemaError,
  listRunDirs,
  readEcdfJson,
  readRecord,
  readTrajectoryCsv,
} from "./schema.js";

export interface BandSeries {
  label: string;
  steps: number[];
  mean: number[];
  lo: number[]; // mean - std
  hi: number[]; // mean + std
  hasBand: boolean;
}

export interface BoxStats {
  label: string;
  min: number;
  q1: number;
  median: number;
  q3: number;
  max: number;
  values: number[];
}

function mean(values: number[]): number {
  return values.reduce((acc, v) => acc + v, 0) / values.length;
}

function std(values: number[]): number {
  const m = mean(values);
  return Math.sqrt(mean(values.map((v) => (v - m) * (v - m))));
}

/** Quantile with linear interpolation (matches numpy's default). */
export function quantile(sortedValues: number[], q: number): number {
  const n = sortedValues.length;
  if (n === 1) return sortedValues[0];
  const pos = q * (n - 1);
  const lo = Math.floor(pos);
  const hi = Math.ceil(pos);
  const frac = pos - lo;
  return sortedValues[lo] * (1 - frac) + sortedValues[hi] * frac;
}

/**
 * Convergence series over one run directory: best_fit per step for every
 * run, grouped by algorithm, with a mean +- 1 std band per step when a
 * group holds more than one run.
 */
export function convergenceSeries(root: string): BandSeries[] {
  const dirs = listRunDirs(root);
  if (dirs.length === 0) {
    throw new SchemaError(`${root}: no data (no record.json found)`);
  }
  const groups = new Map<string, number[][]>();
  for (const dir of dirs) {
    const record = readRecord(path.join(dir, "record.json"));
    const rows = readTrajectoryCsv(path.join(dir, "trajectory.csv"));
    const curve = rows.map((r) => r.best_fit);
    const bucket = groups.get(record.algorithm) ?? [];
    bucket.push(curve);
    groups.set(record.algorithm, bucket);
  }
  const series: BandSeries[] = [];
  for (const [label, curves] of [...groups.entries()].sort()) {
    const nSteps = Math.min(...curves.map((c) => c.length));
    const steps = Array.from({ length: nSteps }, (_, i) => i);
    const perStep = steps.map((i) => curves.map((c) => c[i]));
    const m = perStep.map(mean);
    const s = perStep.map((vals) => (curves.length > 1 ? std(vals) : 0));
    series.push({
      label,
      steps,
      mean: m,
      lo: m.map((v, i) => v - s[i]),
      hi: m.map((v, i) => v + s[i]),
      hasBand: curves.length > 1,
    });
  }
  return series;
}

/** ECDF steps straight from the harness's JSON (no recomputation). */
export function ecdfSeries(root: string): EcdfJson {
  return readEcdfJson(path.join(root, "ecdf.json"));
}

/** Final-error box statistics per algorithm label. */
export function ablationBoxes(root: string): BoxStats[] {
  const dirs = listRunDirs(root);
  if (dirs.length === 0) {
    throw new SchemaError(`${root}: no data (no record.json found)`);
  }
  const groups = new Map<string, number[]>();
  for (const dir of dirs) {
    const rec: RunRecord = readRecord(path.join(dir, "record.json"));
    const err = rec.final_best - rec.f_opt;
    const bucket = groups.get(rec.algorithm) ?? [];
    bucket.push(err);
    groups.set(rec.algorithm, bucket);
  }
  const boxes: BoxStats[] = [];
  for (const [label, values] of [...groups.entries()].sort()) {
    const sorted = [...values].sort((a, b) => a - b);
    boxes.push({
      label,
      min: sorted[0],
      q1: quantile(sorted, 0.25),
      median: quantile(sorted, 0.5),
      q3: quantile(sorted, 0.75),
      max: sorted[sorted.length - 1],
      values: sorted,
    });
  }
  return boxes;
}
