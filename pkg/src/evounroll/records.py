"""Run persistence: trajectory CSVs, record.json, run ids.

The trajectory CSV schema is shared by the learned solver and the
baselines so plots are apples-to-apples; fields a baseline does not have
are written as nan.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

from .errors import ContractError, ParseError

TRAJECTORY_COLUMNS = ("step", "best_fit", "mean_fit", "gate_mean",
                      "lambda_ssm", "lambda_attn", "residual_norm")


def _fmt_cell(v) -> str:
    if isinstance(v, float):
        return repr(v)
    return str(v)


def write_trajectory_csv(path: str | Path, rows: list[dict]) -> None:
    lines = [",".join(TRAJECTORY_COLUMNS)]
    for row in rows:
        lines.append(",".join(_fmt_cell(row[c]) for c in TRAJECTORY_COLUMNS))
    out = Path(path)
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text("\n".join(lines) + "\n")


def read_trajectory_csv(path: str | Path) -> list[dict]:
    text = Path(path).read_text().strip().splitlines()
    if not text:
        raise ParseError(f"{path}: empty trajectory file")
    header = tuple(text[0].split(","))
    if header != TRAJECTORY_COLUMNS:
        raise ParseError(f"{path}: unexpected columns {header}")
    rows = []
    for lineno, line in enumerate(text[1:], start=2):
        cells = line.split(",")
        if len(cells) != len(TRAJECTORY_COLUMNS):
            raise ParseError(f"{path}:{lineno}: wrong cell count")
        row = {"step": int(cells[0])}
        for name, cell in zip(TRAJECTORY_COLUMNS[1:], cells[1:]):
            row[name] = float(cell)
        rows.append(row)
    return rows


@dataclass
class RunRecord:
    """One optimization run: identity, accounting, and progress."""

    run_id: str
    algorithm: str
    function: str                 # replayable descriptor
    f_opt: float
    seed: int
    budget: int
    eval_count: int
    final_best: float
    wall_time: float
    config_hash: str
    trajectory_path: str = ""
    progress: list = field(default_factory=list)   # [evals, best_err] pairs

    @property
    def final_error(self) -> float:
        return self.final_best - self.f_opt

    def as_dict(self) -> dict:
        return {
            "run_id": self.run_id,
            "algorithm": self.algorithm,
            "function": self.function,
            "f_opt": self.f_opt,
            "seed": self.seed,
            "budget": self.budget,
            "eval_count": self.eval_count,
            "final_best": self.final_best,
            "wall_time": self.wall_time,
            "config_hash": self.config_hash,
            "trajectory_path": self.trajectory_path,
            "progress": [[int(e), float(v)] for e, v in self.progress],
        }


def save_record(record: RunRecord, path: str | Path) -> None:
    out = Path(path)
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text(json.dumps(record.as_dict(), indent=2, sort_keys=True) + "\n")


def load_record(path: str | Path) -> RunRecord:
    try:
        raw = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise ParseError(f"{path}: bad record json: {exc}")
    return RunRecord(
        run_id=raw["run_id"], algorithm=raw["algorithm"], function=raw["function"],
        f_opt=raw["f_opt"], seed=raw["seed"], budget=raw["budget"],
        eval_count=raw["eval_count"], final_best=raw["final_best"],
        wall_time=raw["wall_time"], config_hash=raw["config_hash"],
        trajectory_path=raw.get("trajectory_path", ""),
        progress=[(int(e), float(v)) for e, v in raw.get("progress", [])])


def check_budget_accounting(record: RunRecord) -> None:
    if record.eval_count > record.budget:
        raise ContractError(
            f"run {record.run_id}: eval count {record.eval_count} exceeds "
            f"budget {record.budget}")
    if record.progress and record.progress[-1][0] != record.eval_count:
        raise ContractError(
            f"run {record.run_id}: progress tail {record.progress[-1][0]} "
            f"!= counter {record.eval_count}")


def nan_row(step: int, best_fit: float, mean_fit: float) -> dict:
    return {"step": step, "best_fit": best_fit, "mean_fit": mean_fit,
            "gate_mean": math.nan, "lambda_ssm": math.nan,
            "lambda_attn": math.nan, "residual_norm": math.nan}
