"""ECDF / data-profile computation over run records.

For a set of runs sharing a budget and a ladder of target precisions, the
curve reports, at each evaluation count, the fraction of (run, target)
pairs whose best-so-far error has reached the target.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ContractError
from .records import RunRecord


def log_spaced_targets(hi: float, lo: float, count: int) -> np.ndarray:
    if hi <= 0 or lo <= 0 or hi <= lo:
        raise ContractError(f"need hi > lo > 0, got hi={hi} lo={lo}")
    return np.logspace(np.log10(hi), np.log10(lo), count)


@dataclass
class EcdfCurve:
    targets: np.ndarray
    evals: np.ndarray            # evaluation-count grid (ascending)
    values: np.ndarray           # fraction of (run, target) pairs solved

    def as_dict(self) -> dict:
        return {"targets": [float(t) for t in self.targets],
                "evals": [int(e) for e in self.evals],
                "values": [float(v) for v in self.values]}


def compute_ecdf(records: list[RunRecord], targets: np.ndarray) -> EcdfCurve:
    """Fraction of (run, target) pairs solved as the budget is spent."""
    if not records:
        raise ContractError("compute_ecdf needs at least one record")
    budgets = {r.budget for r in records}
    if len(budgets) > 1:
        raise ContractError(f"records mix budgets {sorted(budgets)}")
    targets = np.asarray(targets, dtype=np.float64)
    if targets.size == 0:
        raise ContractError("need at least one target")
    budget = records[0].budget
    grid = sorted({int(e) for r in records for e, _ in r.progress} | {budget})
    total = len(records) * targets.size
    values = []
    for point in grid:
        solved = 0
        for rec in records:
            best = np.inf
            for evals, err in rec.progress:
                if evals <= point:
                    best = min(best, err)
                else:
                    break
            solved += int(np.sum(targets >= best))
        values.append(solved / total)
    return EcdfCurve(targets=targets, evals=np.asarray(grid),
                     values=np.asarray(values))
