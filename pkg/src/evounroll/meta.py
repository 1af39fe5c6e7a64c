"""Outer loop: meta-training the unrolled solver by backprop through time.

Each meta-iteration samples a fresh task batch and fresh uniform initial
populations, unrolls the inner solver on a fresh tape, scores the
normalized-improvement loss, and takes one (clipped) gradient step followed
by spectral re-normalization of every block.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .benchmarks import TaskDistribution, sample_task
from .errors import ConfigError, ContractError, NumericError
from .operator import (OperatorBlockParams, init_block_params, normalize_spectra,
                       spectral_max)
from .solver import InnerConfig, Population, Trajectory, uniform_population, unroll
from .tensor import ParamStore, Tape, Tensor, backward


@dataclass
class MetaConfig:
    """Outer-loop configuration."""

    iterations: int = 200
    gamma: float = 0.05
    tasks_per_batch: int = 8
    inner: InnerConfig = field(default_factory=InnerConfig)
    sharing: str = "unshared"            # or "shared"
    optimizer: str = "plain-gd"          # or "momentum"
    seed: int = 0
    dim: int = 2
    d_model: int = 32
    heads: int = 4
    pop_size: int = 16
    batch: int = 8
    operator_mode: str = "ssm"           # "ff" swaps the SSM branch for an MLP
    epsilon: float = 1e-8
    grad_clip: float = 10.0
    momentum: float = 0.9

    def __post_init__(self):
        if self.iterations < 1:
            raise ConfigError(f"T must be >= 1, got {self.iterations}")
        if self.gamma <= 0.0:
            raise ConfigError(f"gamma must be positive, got {self.gamma}")
        if self.tasks_per_batch < 1:
            raise ConfigError("tasks_per_batch must be >= 1")
        if self.sharing not in ("shared", "unshared"):
            raise ConfigError(f"unknown sharing mode {self.sharing!r}")
        if self.optimizer not in ("plain-gd", "momentum"):
            raise ConfigError(f"unknown optimizer {self.optimizer!r}")
        if self.pop_size < 2:
            raise ConfigError("pop_size must be >= 2")


@dataclass
class TrainRecord:
    """Per-iteration telemetry; list lengths equal the configured T."""

    meta_losses: list = field(default_factory=list)
    grad_norms: list = field(default_factory=list)
    wall_times: list = field(default_factory=list)
    spectral_maxima: list = field(default_factory=list)
    best_loss: float = float("inf")
    best_iteration: int = -1
    gamma_halvings: int = 0
    checkpoint_path: str = ""

    def deterministic_columns(self) -> dict:
        """Everything except wall time, for reproducibility comparisons."""
        return {
            "meta_losses": list(self.meta_losses),
            "grad_norms": list(self.grad_norms),
            "spectral_maxima": list(self.spectral_maxima),
            "best_loss": self.best_loss,
            "best_iteration": self.best_iteration,
        }


def init_params(cfg: MetaConfig) -> tuple[ParamStore, list[OperatorBlockParams]]:
    """Fresh parameter store with one block per unrolled step (or one shared)."""
    rng = np.random.default_rng([cfg.seed, 0xA11CE])
    store = ParamStore()
    n_blocks = 1 if cfg.sharing == "shared" else max(cfg.inner.k_steps, 1)
    blocks = [
        init_block_params(store, f"block{k}", cfg.dim, cfg.d_model, cfg.heads,
                          cfg.operator_mode, rng)
        for k in range(n_blocks)
    ]
    return store, blocks


def fitness_on_tape(f, x: Tensor, mode: str = "analytic") -> Tensor:
    """Objective values as a tape op whose backward rule is the proxy gradient."""
    val = f.evaluate(x.data)
    frozen = x.data.copy()

    def vjp(g):
        return (g[..., None] * f.gradient(frozen, mode=mode),)

    return T.custom_op("objective", val, (x,), vjp)


def meta_loss(trajectories: list[Trajectory], epsilon: float = 1e-8) -> Tensor:
    """Negative normalized improvement, averaged over the task batch.

    Per population: -(mean f(x0) - mean f(xK)) / (|mean f(x0)| + eps).  The
    terminal evaluation is tape-linked; the initial one is a constant.
    """
    if not trajectories:
        raise ContractError("meta_loss needs at least one trajectory")
    if epsilon <= 0.0:
        raise ContractError(f"epsilon must be positive, got {epsilon}")
    total = None
    for tr in trajectories:
        f = tr.objective
        f0 = tr.initial.fit.mean(axis=1)                      # (batch,)
        weight = 1.0 / (np.abs(f0) + epsilon)
        fit_k = fitness_on_tape(f, tr.final.x, mode=tr.gradient_mode)
        mean_k = T.mean_axis(fit_k, axis=1)                   # (batch,)
        term = T.mul(T.sub(mean_k, T.constant(f0)), T.constant(weight))
        task_loss = T.mean_all(term)
        total = task_loss if total is None else T.add(total, task_loss)
    return T.scale(total, 1.0 / len(trajectories))


def _global_norm(grads: dict[str, np.ndarray]) -> float:
    total = 0.0
    for g in grads.values():
        total += float(np.sum(g * g))
    return float(np.sqrt(total))


def meta_step(store: ParamStore, grads: dict[str, np.ndarray], cfg: MetaConfig,
              blocks: list[OperatorBlockParams],
              momentum_state: dict[str, np.ndarray] | None = None,
              gamma: float | None = None) -> float:
    """Clipped (momentum) gradient descent, then spectral re-normalization.

    Returns the pre-clip global gradient norm.
    """
    for path, g in grads.items():
        if not np.all(np.isfinite(g)):
            raise NumericError(f"non-finite meta-gradient for parameter {path!r}")
    if gamma is None:
        gamma = cfg.gamma
    norm = _global_norm(grads)
    factor = 1.0 if norm <= cfg.grad_clip else cfg.grad_clip / norm
    for path, g in grads.items():
        step = g * factor
        if cfg.optimizer == "momentum":
            buf = momentum_state[path]
            buf *= cfg.momentum
            buf += step
            step = buf
        store[path].data = store[path].data - gamma * step
    for block in blocks:
        normalize_spectra(block)
    return norm


def _iteration_rng(seed: int, t: int) -> np.random.Generator:
    return np.random.default_rng([seed, t])


def sample_meta_batch(dist: TaskDistribution, cfg: MetaConfig,
                      t: int) -> list[tuple[object, Population]]:
    """Frozen (task, initial population) pairs for meta-iteration t."""
    rng = _iteration_rng(cfg.seed, t)
    batch = []
    for _ in range(cfg.tasks_per_batch):
        f = sample_task(dist, rng)
        if f.dim != cfg.dim:
            raise ConfigError(
                f"task dim {f.dim} does not match model dim {cfg.dim}")
        x0 = uniform_population(f, cfg.batch, cfg.pop_size, rng)
        batch.append((f, x0))
    return batch


def meta_forward(batch, blocks: list[OperatorBlockParams], cfg: MetaConfig,
                 record_trace: bool = False, traces=None) -> tuple[Tensor, list]:
    """Unroll every task in the batch and assemble the meta-loss tensor."""
    trajectories = []
    for i, (f, x0) in enumerate(batch):
        tr = unroll(x0, f, blocks, cfg.inner, record_trace=record_trace,
                    trace=traces[i] if traces is not None else None)
        tr.objective = f
        tr.gradient_mode = cfg.inner.gradient_mode
        trajectories.append(tr)
    return meta_loss(trajectories, cfg.epsilon), trajectories


def train(dist: TaskDistribution, cfg: MetaConfig) -> tuple[ParamStore, list[OperatorBlockParams], TrainRecord]:
    """Full outer loop; deterministic given (dist, cfg).

    The returned store holds the best-by-meta-loss parameters.  A NaN loss
    aborts the iteration, restores the last good parameters, and halves
    gamma (at most 3 times).
    """
    store, blocks = init_params(cfg)
    record = TrainRecord()
    momentum_state = {p: np.zeros_like(store[p].data) for p in store.paths()}
    gamma = cfg.gamma
    last_good = store.snapshot()
    best_snapshot = store.snapshot()
    for t in range(cfg.iterations):
        started = time.perf_counter()
        batch = sample_meta_batch(dist, cfg, t)
        failed = False
        try:
            with Tape():
                loss, _ = meta_forward(batch, blocks, cfg)
                loss_val = float(loss.data)
                if not np.isfinite(loss_val):
                    raise NumericError(f"non-finite meta-loss at iteration {t}")
                grads = backward(loss, store)
        except NumericError:
            failed = True
        if failed:
            store.restore(last_good)
            record.gamma_halvings += 1
            if record.gamma_halvings > 3:
                raise NumericError(
                    f"meta-training failed at iteration {t}: gamma halved 3 times")
            gamma /= 2.0
            record.meta_losses.append(float("nan"))
            record.grad_norms.append(float("nan"))
            record.spectral_maxima.append(max(spectral_max(b) for b in blocks))
            record.wall_times.append(time.perf_counter() - started)
            continue
        if loss_val < record.best_loss:
            # The loss scores the pre-update parameters.
            record.best_loss = loss_val
            record.best_iteration = t
            best_snapshot = store.snapshot()
        norm = meta_step(store, grads, cfg, blocks, momentum_state, gamma=gamma)
        record.meta_losses.append(loss_val)
        record.grad_norms.append(norm)
        record.spectral_maxima.append(max(spectral_max(b) for b in blocks))
        record.wall_times.append(time.perf_counter() - started)
        last_good = store.snapshot()
    store.restore(best_snapshot)
    return store, blocks, record


def sample_param_subset(store: ParamStore, count: int, seed: int = 0) -> list[tuple[str, int]]:
    """Up to `count` (path, flat index) pairs drawn across trainable params."""
    rng = np.random.default_rng([seed, 0xF0])
    slots: list[tuple[str, int]] = []
    for path, entry in store.items():
        if entry.trainable:
            slots.extend((path, i) for i in range(entry.tensor.size))
    if count >= len(slots):
        return slots
    picks = rng.choice(len(slots), size=count, replace=False)
    return [slots[i] for i in sorted(picks)]


def finite_difference_meta_grad(dist: TaskDistribution, cfg: MetaConfig,
                                store: ParamStore, blocks: list[OperatorBlockParams],
                                subset: list[tuple[str, int]],
                                h: float = 1e-5) -> np.ndarray:
    """Central-difference meta-gradient estimates for a small parameter subset.

    Task sampling and initial populations are frozen (meta-iteration 0 of
    `cfg.seed`), and the non-differentiable channels of the unroll (gate
    masks, proxy gradients, per-step fitness inputs) are replayed from the
    base trace, so the estimates target exactly what BPTT differentiates.
    """
    if len(subset) > 50:
        raise ContractError(f"subset limited to 50 scalars, got {len(subset)}")
    batch = sample_meta_batch(dist, cfg, 0)
    _, trajectories = meta_forward(batch, blocks, cfg, record_trace=True)
    traces = [tr.trace for tr in trajectories]

    def loss_value() -> float:
        loss, _ = meta_forward(batch, blocks, cfg, traces=traces)
        return float(loss.data)

    estimates = np.empty(len(subset))
    for j, (path, idx) in enumerate(subset):
        data = store[path].data
        original = data.flat[idx]
        data.flat[idx] = original + h
        plus = loss_value()
        data.flat[idx] = original - h
        minus = loss_value()
        data.flat[idx] = original
        estimates[j] = (plus - minus) / (2.0 * h)
    return estimates


def bptt_meta_grad(dist: TaskDistribution, cfg: MetaConfig, store: ParamStore,
                   blocks: list[OperatorBlockParams]) -> dict[str, np.ndarray]:
    """BPTT meta-gradient on the same frozen batch the FD oracle uses."""
    batch = sample_meta_batch(dist, cfg, 0)
    with Tape():
        loss, _ = meta_forward(batch, blocks, cfg)
        return backward(loss, store)
