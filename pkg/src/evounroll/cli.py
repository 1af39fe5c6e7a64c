"""Command-line front door.

Subcommands: meta-train, evaluate, ablate, verify-theory, ecdf.
Exit codes: 0 success, 1 failed assertion/check, 2 config errors.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from .checkpoint import load_checkpoint
from .config import config_hash, read_config
from .ecdf import compute_ecdf, log_spaced_targets
from .errors import ConfigError, ContractError, EvounrollError, ParseError
from .harness import meta_train_run, run_ablation, run_eval
from .records import load_record
from .theory import verify_theory


def _cmd_meta_train(args) -> int:
    cfg = read_config(args.config)
    out_dir = Path(cfg["out_dir"]) / f"train-{config_hash(cfg)}"
    _, _, record = meta_train_run(cfg, out_dir=out_dir)
    print(f"trained {len(record.meta_losses)} iterations; "
          f"best meta-loss {record.best_loss:.6f} at iteration "
          f"{record.best_iteration}")
    print(f"checkpoint: {record.checkpoint_path}")
    return 0


def _cmd_evaluate(args) -> int:
    cfg = read_config(args.config)
    store, ckpt_hash = load_checkpoint(args.checkpoint)
    if ckpt_hash and ckpt_hash != config_hash(cfg):
        print(f"note: checkpoint was trained under config {ckpt_hash}, "
              f"evaluating under {config_hash(cfg)}", file=sys.stderr)
    records = run_eval(store, cfg, out_dir=cfg["out_dir"])
    for rec in records:
        print(f"{rec.run_id}  {rec.function:40s} seed={rec.seed:<4d} "
              f"best={rec.final_best:.6e} evals={rec.eval_count}")
    return 0


def _cmd_ablate(args) -> int:
    cfg = read_config(args.config)
    result = run_ablation(args.variant, cfg, out_dir=cfg["out_dir"])
    for row in result.table_rows():
        print(row)
    for (variant, fname), (wins, n, p) in sorted(result.sign_tests.items()):
        print(f"sign test {variant} vs full on {fname}: "
              f"{wins}/{n} seeds worse, p={p:.4f}")
    return 0


def _cmd_verify_theory(args) -> int:
    cfg = read_config(args.config) if args.config else None
    seed = cfg["seed"] if cfg else 0
    reports = verify_theory(seed=seed)
    payload = [r.as_dict() for r in reports]
    print(json.dumps(payload, indent=2))
    if cfg:
        out = Path(cfg["out_dir"])
        out.mkdir(parents=True, exist_ok=True)
        (out / "theory_report.json").write_text(json.dumps(payload, indent=2))
    return 0 if all(r.passed for r in reports) else 1


def _cmd_ecdf(args) -> int:
    records = []
    for record_file in sorted(Path(args.records_dir).glob("*/record.json")):
        records.append(load_record(record_file))
    if not records:
        print(f"no record.json files under {args.records_dir}", file=sys.stderr)
        return 2
    targets = log_spaced_targets(args.target_hi, args.target_lo, args.levels)
    curve = compute_ecdf(records, targets)
    payload = curve.as_dict()
    print(json.dumps(payload, indent=2))
    out = Path(args.records_dir) / "ecdf.json"
    out.write_text(json.dumps(payload, indent=2))
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="evounroll",
        description="Unrolled evolutionary optimizer toolkit")
    sub = parser.add_subparsers(dest="command", required=True)

    p_train = sub.add_parser("meta-train", help="train the solver from a config")
    p_train.add_argument("config")
    p_train.set_defaults(fn=_cmd_meta_train)

    p_eval = sub.add_parser("evaluate", help="evaluate a checkpoint over the suite")
    p_eval.add_argument("checkpoint")
    p_eval.add_argument("config")
    p_eval.set_defaults(fn=_cmd_evaluate)

    p_abl = sub.add_parser("ablate", help="train/evaluate an ablation variant")
    p_abl.add_argument("variant")
    p_abl.add_argument("config")
    p_abl.set_defaults(fn=_cmd_ablate)

    p_theory = sub.add_parser("verify-theory", help="run the convergence checks")
    p_theory.add_argument("config", nargs="?")
    p_theory.set_defaults(fn=_cmd_verify_theory)

    p_ecdf = sub.add_parser("ecdf", help="ECDF profile from a records directory")
    p_ecdf.add_argument("records_dir")
    p_ecdf.add_argument("--target-hi", type=float, default=1e2)
    p_ecdf.add_argument("--target-lo", type=float, default=1e-6)
    p_ecdf.add_argument("--levels", type=int, default=17)
    p_ecdf.set_defaults(fn=_cmd_ecdf)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.fn(args)
    except (ConfigError, ParseError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except (ContractError, EvounrollError) as exc:
        print(f"check failed: {exc}", file=sys.stderr)
        return 1


def entry() -> None:
    raise SystemExit(main())
