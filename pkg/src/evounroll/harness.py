"""Experiment orchestration: evaluation runs, ablations, persistence.

Evaluation bridges a fixed-depth unrolled solver to an arbitrary budget by
re-running warm-started unrolls until the remaining budget cannot cover
another full chunk.  All accounting goes through an instrumented objective
wrapper and is asserted against the predicted per-step costs.
"""

from __future__ import annotations

import hashlib
import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .baselines import BaselineConfig, run_baseline
from .benchmarks import (CountingObjective, ObjectiveFunction, SMOOTH_FAMILIES,
                         uses_fd_gradient)
from .checkpoint import save_checkpoint
from .config import build_distribution, build_inner, build_meta, config_hash
from .errors import ConfigError, ContractError
from .meta import MetaConfig, train
from .operator import OperatorBlockParams, blocks_from_store
from .records import (RunRecord, check_budget_accounting, nan_row, save_record,
                      write_trajectory_csv)
from .solver import InnerConfig, uniform_population, unroll
from .tensor import ParamStore


def run_id_for(cfg: dict, seed: int, descriptor: str, algorithm: str) -> str:
    base = f"{config_hash(cfg)}|{seed}|{descriptor}|{algorithm}"
    return hashlib.sha256(base.encode("utf-8")).hexdigest()[:16]


def per_step_cost(pop_size: int, batch: int, dim: int, fd_gradient: bool) -> int:
    """Objective evaluations per inner step (candidates + post-update + FD probes)."""
    cost = 3 * pop_size * batch
    if fd_gradient:
        cost += 2 * dim * pop_size * batch
    return cost


def min_feasible_budget(pop_size: int, batch: int, dim: int, k_steps: int,
                        fd_gradient: bool) -> int:
    return pop_size * batch + k_steps * per_step_cost(pop_size, batch, dim,
                                                      fd_gradient)


def make_suite(cfg: dict) -> list[ObjectiveFunction]:
    """Deterministic evaluation instances: one per configured family."""
    suite = []
    for i, family in enumerate(sorted(cfg["families"])):
        suite.append(ObjectiveFunction.from_seed(
            family, cfg["dim"], seed=cfg["seed"] * 1000 + i,
            rotation=cfg["rotation"],
            shift_range=(cfg["shift_lo"], cfg["shift_hi"]),
            surrogate_shift=cfg["surrogate_shift"]))
    return suite


def smooth_suite(cfg: dict) -> list[ObjectiveFunction]:
    return [ObjectiveFunction.from_seed(
        family, cfg["dim"], seed=cfg["seed"] * 1000 + 500 + i,
        rotation=cfg["rotation"], shift_range=(cfg["shift_lo"], cfg["shift_hi"]))
        for i, family in enumerate(SMOOTH_FAMILIES)]


def _write_run(out_dir: str | Path | None, cfg: dict, record: RunRecord,
               rows: list[dict]) -> None:
    if out_dir is None:
        return
    from .config import write_config

    run_dir = Path(out_dir) / record.run_id
    write_config(cfg, run_dir / "config.txt")
    write_trajectory_csv(run_dir / "trajectory.csv", rows)
    record.trajectory_path = str(run_dir / "trajectory.csv")
    save_record(record, run_dir / "record.json")


def eval_one_solver(f: ObjectiveFunction, seed: int, blocks: list[OperatorBlockParams],
                    cfg: dict, out_dir: str | Path | None = None) -> RunRecord:
    """One (function, seed) run: warm-started unroll chunks to budget exhaustion."""
    inner = build_inner(cfg)
    pop_size = cfg["pop_size"]
    batch = cfg["eval_batch"]
    budget = cfg["budget"]
    fd_grad = uses_fd_gradient(f, inner.gradient_mode)
    step_cost = per_step_cost(pop_size, batch, f.dim, fd_grad)
    needed = min_feasible_budget(pop_size, batch, f.dim, inner.k_steps, fd_grad)
    if budget < needed:
        raise ConfigError(
            f"budget {budget} cannot cover one unroll; minimum feasible "
            f"budget is {needed}")
    counting = CountingObjective(f)
    rng = np.random.default_rng([seed, f.seed % (2 ** 32)])
    started = time.perf_counter()
    pop = uniform_population(counting, batch, pop_size, rng)
    rows = [{"step": 0, "best_fit": counting.best, "mean_fit": pop.mean(),
             "gate_mean": math.nan, "lambda_ssm": math.nan,
             "lambda_attn": math.nan, "residual_norm": math.nan}]
    global_step = 0
    try_step = 0
    adagrad_state = np.zeros_like(pop.x.data)
    while inner.k_steps > 0:
        # Warm-started restarts of the K-block solver; the last restart may
        # run fewer blocks so the budget is actually spent.  Within one try
        # the population, the preconditioner accumulator and the s_k
        # schedule all carry over; a chunk that fails to improve the best
        # evaluated value ends the try and a fresh uniform population is
        # drawn.
        steps = min(inner.k_steps, (budget - counting.count) // step_cost)
        if steps <= 0:
            break
        run_cfg = inner if steps == inner.k_steps else replace(inner, k_steps=steps)
        run_blocks = blocks if len(blocks) == 1 else blocks[:steps]
        count_before = counting.count
        best_before = counting.best
        trajectory = unroll(pop, counting, run_blocks, run_cfg,
                            adagrad_state=adagrad_state, step_offset=try_step)
        if counting.count != count_before + steps * step_cost:
            raise ContractError(
                f"evaluation accounting drifted: counter {counting.count}, "
                f"expected {count_before + steps * step_cost}")
        for i, diag in enumerate(trajectory.steps, start=1):
            global_step += 1
            try_step += 1
            boundary = count_before + i * step_cost
            rows.append({"step": global_step,
                         "best_fit": _best_at(counting.improvements, boundary),
                         "mean_fit": diag.mean_fit, "gate_mean": diag.gate_mean,
                         "lambda_ssm": diag.lambda_ssm,
                         "lambda_attn": diag.lambda_attn,
                         "residual_norm": diag.residual_norm})
        stagnated = counting.best >= best_before - 1e-12 * max(1.0, abs(best_before))
        if stagnated and counting.count + pop_size * batch <= budget:
            pop = uniform_population(counting, batch, pop_size, rng)
            adagrad_state = np.zeros_like(pop.x.data)
            try_step = 0
        else:
            pop = trajectory.final.detached()
    progress = [(count, value - f.f_opt) for count, value in counting.improvements]
    if not progress or progress[-1][0] != counting.count:
        progress.append((counting.count, counting.best - f.f_opt))
    record = RunRecord(
        run_id=run_id_for(cfg, seed, f.descriptor(), "evounroll"),
        algorithm="evounroll", function=f.descriptor(), f_opt=f.f_opt,
        seed=seed, budget=budget, eval_count=counting.count,
        final_best=counting.best,
        wall_time=time.perf_counter() - started, config_hash=config_hash(cfg),
        progress=progress)
    check_budget_accounting(record)
    _write_run(out_dir, cfg, record, rows)
    return record


def _best_at(improvements: list, boundary: int) -> float:
    best = math.inf
    for count, value in improvements:
        if count > boundary:
            break
        best = value
    return best


def eval_one_baseline(f: ObjectiveFunction, seed: int, algorithm: str,
                      cfg: dict, out_dir: str | Path | None = None) -> RunRecord:
    """One baseline run consuming the budget exactly."""
    counting = CountingObjective(f)
    base_cfg = BaselineConfig(algorithm=algorithm, pop_size=cfg["baseline_pop"],
                              budget=cfg["budget"])
    rng = np.random.default_rng([seed, f.seed % (2 ** 32)])
    started = time.perf_counter()
    state = run_baseline(counting, base_cfg, rng)
    if counting.count != cfg["budget"]:
        raise ContractError(
            f"baseline {algorithm} spent {counting.count} of {cfg['budget']}")
    rows = [nan_row(i, best, mean)
            for i, (_, best, mean) in enumerate(state.history)]
    progress = [(evals, best - f.f_opt) for evals, best, _ in state.history]
    record = RunRecord(
        run_id=run_id_for(cfg, seed, f.descriptor(), algorithm),
        algorithm=algorithm, function=f.descriptor(), f_opt=f.f_opt, seed=seed,
        budget=cfg["budget"], eval_count=counting.count,
        final_best=state.gbest_fit, wall_time=time.perf_counter() - started,
        config_hash=config_hash(cfg), progress=progress)
    check_budget_accounting(record)
    _write_run(out_dir, cfg, record, rows)
    return record


def run_eval(store: ParamStore, cfg: dict, out_dir: str | Path | None = None,
             suite: list[ObjectiveFunction] | None = None,
             seeds: tuple[int, ...] | None = None) -> list[RunRecord]:
    """Evaluate a checkpointed solver over (function, seed) jobs."""
    if suite is None:
        suite = make_suite(cfg)
    if not suite:
        raise ConfigError("evaluation suite is empty")
    if seeds is None:
        seeds = cfg["eval_seeds"]
    n_blocks = 1 if cfg["sharing"] == "shared" else cfg["k_steps"]
    blocks = blocks_from_store(store, n_blocks, cfg["dim"], cfg["d_model"],
                               cfg["heads"], cfg["operator_mode"])
    jobs = [(f, seed) for f in suite for seed in seeds]
    if cfg["workers"] > 1:
        with ThreadPoolExecutor(max_workers=cfg["workers"]) as pool:
            futures = [pool.submit(eval_one_solver, f, seed, blocks, cfg, out_dir)
                       for f, seed in jobs]
            return [fut.result() for fut in futures]
    return [eval_one_solver(f, seed, blocks, cfg, out_dir) for f, seed in jobs]


# ---------------------------------------------------------------------------
# meta-training entry


def meta_train_run(cfg: dict, out_dir: str | Path | None = None,
                   iterations: int | None = None):
    """Train from a config; optionally persist checkpoint and record CSV."""
    dist = build_distribution(cfg)
    meta_cfg = build_meta(cfg, iterations=iterations)
    store, blocks, record = train(dist, meta_cfg)
    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        ckpt = out / "checkpoint.ckpt"
        save_checkpoint(store, ckpt, config_hash(cfg))
        record.checkpoint_path = str(ckpt)
        lines = ["iteration,meta_loss,grad_norm,spectral_max"]
        for t in range(len(record.meta_losses)):
            lines.append(f"{t},{record.meta_losses[t]!r},"
                         f"{record.grad_norms[t]!r},{record.spectral_maxima[t]!r}")
        (out / "train_record.csv").write_text("\n".join(lines) + "\n")
        from .config import write_config

        write_config(cfg, out / "config.txt")
    return store, blocks, record


# ---------------------------------------------------------------------------
# ablations


ABLATION_VARIANTS = ("full", "no-proxygrad", "no-softgate", "no-mamba",
                     "shared", "unshared")


def ablation_patch(cfg: dict, variant: str) -> dict:
    """Config patch for one ablation variant."""
    patched = dict(cfg)
    if variant in ("full", "unshared"):
        pass
    elif variant == "no-proxygrad":
        patched["gate_override"] = 0.0
    elif variant == "no-softgate":
        patched["gate_override"] = 0.5
    elif variant == "no-mamba":
        patched["operator_mode"] = "ff"
    elif variant == "shared":
        patched["sharing"] = "shared"
    else:
        raise ConfigError(f"unknown ablation variant {variant!r}")
    return patched


def sign_test_p(wins: int, n: int) -> float:
    """One-sided exact binomial: P(X >= wins) under fair-coin null."""
    if n == 0:
        return 1.0
    return sum(math.comb(n, i) for i in range(wins, n + 1)) / 2.0 ** n


@dataclass
class AblationResult:
    variants: list[str]
    functions: list[str]
    errors: dict = field(default_factory=dict)    # (variant, fname) -> list per seed
    summary: dict = field(default_factory=dict)   # (variant, fname) -> (mean, std)
    sign_tests: dict = field(default_factory=dict)  # (variant, fname) -> (wins, n, p)

    def table_rows(self) -> list[str]:
        rows = []
        for variant in self.variants:
            for fname in self.functions:
                mean, std = self.summary[(variant, fname)]
                rows.append(f"{variant:14s} {fname:24s} {mean:.6e} +- {std:.3e}")
        return rows


def run_ablation(variant: str, cfg: dict,
                 out_dir: str | Path | None = None) -> AblationResult:
    """Train and evaluate `full` plus `variant` under identical seeds/budgets."""
    if variant not in ABLATION_VARIANTS:
        raise ConfigError(f"unknown ablation variant {variant!r}; "
                          f"choose from {ABLATION_VARIANTS}")
    variants = ["full"] if variant in ("full", "unshared") else ["full", variant]
    suite = smooth_suite(cfg)
    seeds = cfg["eval_seeds"]
    result = AblationResult(variants=list(variants),
                            functions=[f.family for f in suite])
    per_variant_records: dict[str, dict] = {}
    for name in variants:
        vcfg = ablation_patch(cfg, name)
        store, blocks, _ = meta_train_run(
            vcfg, out_dir=None, iterations=cfg["ablation_iterations"])
        records = {}
        for f in suite:
            errs = []
            for seed in seeds:
                rec = eval_one_solver(f, seed, blocks, vcfg, out_dir=None)
                errs.append(rec.final_error)
            records[f.family] = errs
            result.errors[(name, f.family)] = errs
            result.summary[(name, f.family)] = (float(np.mean(errs)),
                                                float(np.std(errs)))
        per_variant_records[name] = records
    for name in variants[1:]:
        for f in suite:
            full_errs = per_variant_records["full"][f.family]
            var_errs = per_variant_records[name][f.family]
            wins = sum(1 for a, b in zip(var_errs, full_errs) if a > b)
            result.sign_tests[(name, f.family)] = (
                wins, len(seeds), sign_test_p(wins, len(seeds)))
    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        (out / f"ablation_{variant}.txt").write_text(
            "\n".join(result.table_rows()) + "\n")
    return result
