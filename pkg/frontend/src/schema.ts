/**
 * Readers for the harness output files.
 *
 * The trajectory CSV schema is pinned; any deviation is an error that names
 * the file and the offending column, never a silent skip.
 */

import * as fs from "node:fs";
import * as path from "node:path";

export const TRAJECTORY_COLUMNS = [
  "step",
  "best_fit",
  "mean_fit",
  "gate_mean",
  "lambda_ssm",
  "lambda_attn",
  "residual_norm",
] as const;

export interface TrajectoryRow {
  step: number;
  best_fit: number;
  mean_fit: number;
  gate_mean: number;
  lambda_ssm: number;
  lambda_attn: number;
  residual_norm: number;
}

export interface RunRecord {
  run_id: string;
  algorithm: string;
  function: string;
  f_opt: number;
  seed: number;
  budget: number;
  eval_count: number;
  final_best: number;
  progress: [number, number][];
}

export interface EcdfJson {
  targets: number[];
  evals: number[];
  values: number[];
}

export class SchemaError extends Error {}

function parseCell(file: string, column: string, raw: string): number {
  const v = raw === "nan" ? NaN : Number(raw);
  if (raw !== "nan" && Number.isNaN(v)) {
    throw new SchemaError(`${file}: column ${column}: bad number ${raw}`);
  }
  return v;
}

export function readTrajectoryCsv(file: string): TrajectoryRow[] {
  const text = fs.readFileSync(file, "utf-8").trim();
  if (!text) throw new SchemaError(`${file}: empty trajectory file`);
  const lines = text.split("\n");
  const header = lines[0].split(",");
  for (let i = 0; i < TRAJECTORY_COLUMNS.length; i++) {
    if (header[i] !== TRAJECTORY_COLUMNS[i]) {
      throw new SchemaError(
        `${file}: column ${i} is ${header[i] ?? "<missing>"}, expected ${TRAJECTORY_COLUMNS[i]}`
      );
    }
  }
  if (header.length !== TRAJECTORY_COLUMNS.length) {
    throw new SchemaError(`${file}: unexpected extra columns ${header.slice(TRAJECTORY_COLUMNS.length)}`);
  }
  const rows: TrajectoryRow[] = [];
  for (let ln = 1; ln < lines.length; ln++) {
    const cells = lines[ln].split(",");
    if (cells.length !== TRAJECTORY_COLUMNS.length) {
      throw new SchemaError(`${file}:${ln + 1}: expected ${TRAJECTORY_COLUMNS.length} cells`);
    }
    rows.push({
      step: parseCell(file, "step", cells[0]),
      best_fit: parseCell(file, "best_fit", cells[1]),
      mean_fit: parseCell(file, "mean_fit", cells[2]),
      gate_mean: parseCell(file, "gate_mean", cells[3]),
      lambda_ssm: parseCell(file, "lambda_ssm", cells[4]),
      lambda_attn: parseCell(file, "lambda_attn", cells[5]),
      residual_norm: parseCell(file, "residual_norm", cells[6]),
    });
  }
  return rows;
}

export function readRecord(file: string): RunRecord {
  let raw: unknown;
  try {
    raw = JSON.parse(fs.readFileSync(file, "utf-8"));
  } catch (err) {
    throw new SchemaError(`${file}: bad record json: ${err}`);
  }
  const rec = raw as RunRecord;
  for (const field of ["run_id", "algorithm", "function", "budget", "progress"]) {
    if (!(field in (rec as object))) {
      throw new SchemaError(`${file}: record.json missing field ${field}`);
    }
  }
  return rec;
}

export function readEcdfJson(file: string): EcdfJson {
  let raw: unknown;
  try {
    raw = JSON.parse(fs.readFileSync(file, "utf-8"));
  } catch (err) {
    throw new SchemaError(`${file}: bad ecdf json: ${err}`);
  }
  const curve = raw as EcdfJson;
  for (const field of ["targets", "evals", "values"] as const) {
    if (!Array.isArray(curve[field])) {
      throw new SchemaError(`${file}: ecdf json missing array ${field}`);
    }
  }
  if (curve.evals.length !== curve.values.length) {
    throw new SchemaError(`${file}: evals/values length mismatch`);
  }
  return curve;
}

/** All run directories (containing record.json) under a root, sorted. */
export function listRunDirs(root: string): string[] {
  if (!fs.existsSync(root)) throw new SchemaError(`${root}: no such directory`);
  return fs
    .readdirSync(root)
    .map((name) => path.join(root, name))
    .filter((p) => fs.existsSync(path.join(p, "record.json")))
    .sort();
}
