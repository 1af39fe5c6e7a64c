"""Flat key=value experiment configuration, fail-closed.

Unknown keys are errors (silent typos destroy run comparability), `#`
starts a comment, and every key has a typed default so a written config
round-trips exactly.
"""

from __future__ import annotations

import hashlib
from pathlib import Path

from .benchmarks import FAMILIES, TaskDistribution
from .errors import ConfigError, ParseError
from .meta import MetaConfig
from .solver import InnerConfig


def _parse_bool(text: str) -> bool:
    low = text.strip().lower()
    if low in ("true", "1", "yes", "on"):
        return True
    if low in ("false", "0", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _parse_float_or_none(text: str):
    if text.strip().lower() in ("none", ""):
        return None
    return float(text)


def _parse_families(text: str) -> dict[str, float]:
    """"Sphere,Rastrigin" or weighted "Sphere:0.7,Rastrigin:0.3"."""
    out: dict[str, float] = {}
    for part in text.split(","):
        part = part.strip()
        if not part:
            continue
        if ":" in part:
            name, weight = part.split(":", 1)
            out[name.strip()] = float(weight)
        else:
            out[part] = 1.0
    if not out:
        raise ValueError("empty family list")
    return out


def _parse_int_list(text: str) -> tuple[int, ...]:
    return tuple(int(p) for p in text.split(",") if p.strip())


def _fmt(value) -> str:
    if value is None:
        return "none"
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    if isinstance(value, dict):
        return ",".join(f"{k}:{repr(v)}" for k, v in value.items())
    if isinstance(value, tuple):
        return ",".join(str(v) for v in value)
    return str(value)


# key -> (parser, default)
SCHEMA: dict[str, tuple] = {
    "seed": (int, 0),
    # task distribution
    "families": (_parse_families, {"Sphere": 1.0}),
    "dim": (int, 2),
    "rotation": (_parse_bool, False),
    "shift_lo": (float, -4.0),
    "shift_hi": (float, 4.0),
    "surrogate_shift": (_parse_bool, False),
    # inner solver
    "k_steps": (int, 10),
    "alpha": (float, 0.5),
    "tau": (float, 1.0),
    "kappa": (float, 0.3),
    "preconditioner": (str, "identity"),
    "gradient_mode": (str, "analytic"),
    "smoothing_sigma": (float, 0.0),
    "gate_override": (_parse_float_or_none, None),
    # operator architecture
    "d_model": (int, 32),
    "heads": (int, 4),
    "operator_mode": (str, "ssm"),
    "sharing": (str, "unshared"),
    # meta training
    "iterations": (int, 200),
    "gamma": (float, 0.05),
    "tasks_per_batch": (int, 8),
    "pop_size": (int, 16),
    "batch": (int, 8),
    "epsilon": (float, 1e-8),
    "optimizer": (str, "plain-gd"),
    # evaluation
    "budget": (int, 2000),
    "eval_seeds": (_parse_int_list, tuple(range(10))),
    "eval_batch": (int, 1),
    "eval_functions": (int, 4),
    "baseline_pop": (int, 16),
    "out_dir": (str, "runs"),
    "workers": (int, 1),
    # ablation
    "ablation_iterations": (int, 60),
    # ecdf
    "ecdf_target_hi": (float, 1e2),
    "ecdf_target_lo": (float, 1e-6),
    "ecdf_target_count": (int, 17),
}


def default_config() -> dict:
    return {key: default for key, (_, default) in SCHEMA.items()}


def parse_config_text(text: str, source: str = "<string>") -> dict:
    cfg = default_config()
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ParseError(f"{source}:{lineno}: expected key=value, got {raw!r}")
        key, value = (part.strip() for part in line.split("=", 1))
        if key not in SCHEMA:
            raise ParseError(f"{source}:{lineno}: unknown key {key!r}")
        parser = SCHEMA[key][0]
        try:
            cfg[key] = parser(value)
        except ValueError as exc:
            raise ParseError(f"{source}:{lineno}: bad value for {key!r}: {exc}")
    _validate(cfg)
    return cfg


def read_config(path: str | Path) -> dict:
    return parse_config_text(Path(path).read_text(), source=str(path))


def write_config(cfg: dict, path: str | Path) -> None:
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    lines = [f"{key} = {_fmt(cfg[key])}" for key in SCHEMA]
    Path(path).write_text("\n".join(lines) + "\n")


# Orchestration-only keys; they never affect results and stay out of the
# run-identity hash.
EXECUTION_KEYS = frozenset({"workers", "out_dir"})


def config_hash(cfg: dict) -> str:
    canon = "\n".join(f"{key}={_fmt(cfg[key])}"
                      for key in sorted(SCHEMA) if key not in EXECUTION_KEYS)
    return hashlib.sha256(canon.encode("utf-8")).hexdigest()[:16]


def _validate(cfg: dict) -> None:
    for fam in cfg["families"]:
        if fam not in FAMILIES:
            raise ConfigError(f"unknown function family {fam!r}")
    if cfg["shift_lo"] >= cfg["shift_hi"]:
        raise ConfigError("shift_lo must be below shift_hi")
    if cfg["budget"] < 1:
        raise ConfigError("budget must be >= 1")
    if cfg["workers"] < 1:
        raise ConfigError("workers must be >= 1")


# ---------------------------------------------------------------------------
# typed views


def build_inner(cfg: dict) -> InnerConfig:
    return InnerConfig(
        k_steps=cfg["k_steps"], alpha=cfg["alpha"], tau=cfg["tau"],
        kappa=cfg["kappa"], preconditioner=cfg["preconditioner"],
        gradient_mode=cfg["gradient_mode"],
        smoothing_sigma=cfg["smoothing_sigma"],
        gate_override=cfg["gate_override"])


def build_meta(cfg: dict, iterations: int | None = None) -> MetaConfig:
    return MetaConfig(
        iterations=cfg["iterations"] if iterations is None else iterations,
        gamma=cfg["gamma"], tasks_per_batch=cfg["tasks_per_batch"],
        inner=build_inner(cfg), sharing=cfg["sharing"],
        optimizer=cfg["optimizer"], seed=cfg["seed"], dim=cfg["dim"],
        d_model=cfg["d_model"], heads=cfg["heads"], pop_size=cfg["pop_size"],
        batch=cfg["batch"], operator_mode=cfg["operator_mode"],
        epsilon=cfg["epsilon"])


def build_distribution(cfg: dict) -> TaskDistribution:
    return TaskDistribution(
        families=dict(cfg["families"]), dims=(cfg["dim"],),
        shift_range=(cfg["shift_lo"], cfg["shift_hi"]),
        rotation=cfg["rotation"], seed=cfg["seed"])
