"""Inner loop: KM-averaged composite updates, unrolled K steps on the tape.

Each step forms two candidates -- a relaxed learned-operator update and a
preconditioned proxy-gradient step with schedule s_k = kappa / (k + 1) --
blends them through a per-individual soft gate driven by the fitness gap,
projects back into the box, and re-evaluates.  Black-box fitness values
(gate inputs, embedding inputs) enter the tape as constants; gradients flow
through the population path only.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .errors import ConfigError, ContractError, NumericError
from .operator import OperatorBlockParams, propose
from .tensor import Tensor

STEP_SCALE_FRAC = 0.1  # learned proposals move at most this fraction of the box
ADAGRAD_EPS = 1e-8


@dataclass
class Population:
    """Batch of candidate solution sets with attached fitness."""

    x: Tensor                     # batch x pop x dim
    fit: np.ndarray               # batch x pop, consistent with x
    bounds: tuple[float, float]

    @property
    def batch(self) -> int:
        return self.x.shape[0]

    @property
    def pop_size(self) -> int:
        return self.x.shape[1]

    @property
    def dim(self) -> int:
        return self.x.shape[2]

    def best(self) -> float:
        return float(self.fit.min())

    def mean(self) -> float:
        return float(self.fit.mean())

    def detached(self) -> "Population":
        return Population(self.x.detach(), self.fit.copy(), self.bounds)


def uniform_population(f, batch: int, pop_size: int, rng: np.random.Generator) -> Population:
    """Fresh uniform-in-box population with evaluated fitness."""
    lo, hi = f.bounds
    x = rng.uniform(lo, hi, size=(batch, pop_size, f.dim))
    return Population(T.constant(x), f.evaluate(x), (lo, hi))


@dataclass
class InnerConfig:
    """Knobs of one K-step unroll."""

    k_steps: int = 10
    alpha: float = 0.5
    tau: float = 1.0
    kappa: float = 0.3
    preconditioner: str = "identity"        # or "diagonal-adagrad"
    gradient_mode: str = "analytic"         # or "finite-difference"
    smoothing_sigma: float = 0.0
    gate_override: float | None = None      # None = soft gate; 0 / 0.5 / 1 force M

    def __post_init__(self):
        if self.k_steps < 0:
            raise ConfigError(f"K must be >= 0, got {self.k_steps}")
        if not 0.0 < self.alpha <= 1.0:
            raise ConfigError(f"alpha must be in (0, 1], got {self.alpha}")
        if self.tau <= 0.0:
            raise ConfigError(f"tau must be positive, got {self.tau}")
        if self.kappa <= 0.0:
            raise ConfigError(f"kappa must be positive, got {self.kappa}")
        if self.preconditioner not in ("identity", "diagonal-adagrad"):
            raise ConfigError(f"unknown preconditioner {self.preconditioner!r}")
        if self.gradient_mode not in ("analytic", "finite-difference"):
            raise ConfigError(f"unknown gradient mode {self.gradient_mode!r}")
        if not 0.0 <= self.smoothing_sigma < 1.0:
            raise ConfigError(
                f"smoothing_sigma must be in [0, 1), got {self.smoothing_sigma}")
        if self.gate_override is not None and not 0.0 <= self.gate_override <= 1.0:
            raise ConfigError(f"gate_override must be in [0, 1], got {self.gate_override}")


@dataclass
class GateMask:
    """Per-individual blend weight, broadcast over dimensions."""

    m: np.ndarray  # batch x pop x 1, entries in (0, 1) unless overridden


def evals_per_step(pop_size: int, batch: int = 1) -> int:
    """Objective evaluations per inner step: two candidates + one post-update."""
    return 3 * pop_size * batch


# ---------------------------------------------------------------------------
# operations


def numerical_operator(pop: Population, cfg: InnerConfig) -> Population:
    """Box projection, then optional shrink of every individual toward the
    population mean with weight smoothing_sigma (non-expansive for sigma < 1).

    Fitness is carried over unchanged; callers re-evaluate after the full
    composite step.
    """
    lo, hi = pop.bounds
    y = T.clamp(pop.x, lo, hi)
    sigma = cfg.smoothing_sigma
    if sigma > 0.0:
        center = T.mean_axis(y, axis=1, keepdims=True)
        y = T.add(T.scale(y, 1.0 - sigma), T.scale(center, sigma))
    return Population(y, pop.fit, pop.bounds)


def km_step(pop: Population, f, cfg: InnerConfig, p: OperatorBlockParams,
            synthetic_op=None, evaluate_result: bool = True,
            frozen_stats: np.ndarray | None = None) -> tuple[Population, dict]:
    """One relaxed application of the composed operator.

    x' = (1 - alpha) x + alpha * O(x) with O = O_evo after O_num; the learned
    part proposes a tanh-bounded move scaled to a tenth of the box.  The
    result is re-evaluated (one candidate evaluation).
    """
    lo, hi = pop.bounds
    if synthetic_op is not None:
        applied = T.constant(synthetic_op(pop.x.data))
        diag = {"lambda_ssm": float("nan"), "lambda_attn": float("nan"),
                "stats": None}
    else:
        y = numerical_operator(pop, cfg)
        delta, diag = propose(y.x, pop.fit, p, stats=frozen_stats)
        applied = T.add(y.x, T.scale(delta, STEP_SCALE_FRAC * (hi - lo)))
    mixed = T.add(T.scale(pop.x, 1.0 - cfg.alpha), T.scale(applied, cfg.alpha))
    fit = f.evaluate(mixed.data) if evaluate_result else np.full_like(pop.fit, np.nan)
    return Population(mixed, fit, pop.bounds), diag


def schedule_step_size(kappa: float, k: int) -> float:
    """Diminishing inner step size kappa / (k + 1)."""
    return kappa / (k + 1)


def proxy_grad_direction(pop: Population, f, k: int, cfg: InnerConfig,
                         adagrad_accum: np.ndarray | None = None,
                         frozen_grad: np.ndarray | None = None) -> tuple[Tensor, np.ndarray]:
    """Preconditioned gradient candidate d_OL = x - s_k P^-1 g.

    The raw gradient enters the tape as a constant (the objective is treated
    as black-box); only the identity path through x carries gradients.
    Returns the candidate and the raw gradient (for adagrad accumulation).
    """
    if frozen_grad is not None:
        g = frozen_grad
    else:
        g = f.gradient(pop.x.data, mode=cfg.gradient_mode)
    if not np.all(np.isfinite(g)):
        raise NumericError(f"non-finite objective gradient at inner step {k}")
    s_k = schedule_step_size(cfg.kappa, k)
    if cfg.preconditioner == "diagonal-adagrad":
        if adagrad_accum is None:
            raise ContractError("diagonal-adagrad needs an accumulator")
        precond = np.sqrt(adagrad_accum + g * g) + ADAGRAD_EPS
        step = g / precond
    else:
        step = g
    d_ol = T.add(pop.x, T.constant(-s_k * step))
    return d_ol, g


def soft_gate(fit_ol: np.ndarray, fit_il: np.ndarray, tau: float) -> GateMask:
    """M = sigmoid(-(f(d_OL) - f(d_IL)) / tau), per individual.

    M -> 1 when the gradient candidate is much better, M -> 0 when the
    learned candidate is much better; equal fitness gives exactly 0.5.
    """
    if tau <= 0.0:
        raise ContractError(f"gate temperature must be positive, got {tau}")
    delta_f = fit_ol - fit_il
    return GateMask(T.stable_sigmoid(-delta_f / tau)[..., None])


def composite_update(pop: Population, d_ol: Tensor, d_il: Population,
                     mask: GateMask, f, cfg: InnerConfig,
                     capture: bool = False) -> tuple[Population, dict | None]:
    """Blend the candidates with the gate, project to the box, re-evaluate."""
    m = T.constant(mask.m)
    one_minus = T.constant(1.0 - mask.m)
    blend = T.add(T.mul(m, d_ol), T.mul(one_minus, d_il.x))
    lo, hi = pop.bounds
    projected = T.clamp(blend, lo, hi)
    fit = f.evaluate(projected.data)
    captured = None
    if capture:
        captured = {"mask": mask.m.copy(), "d_ol": d_ol.data.copy(),
                    "d_il": d_il.x.data.copy(), "blend": blend.data.copy()}
    return Population(projected, fit, pop.bounds), captured


# ---------------------------------------------------------------------------
# unroll


@dataclass
class StepDiag:
    step: int
    best_fit: float
    mean_fit: float
    gate_mean: float
    lambda_ssm: float
    lambda_attn: float
    residual_norm: float
    capture: dict | None = None


@dataclass
class UnrollTrace:
    """Frozen non-differentiable inputs of one unroll, for replay.

    Replaying with a perturbed parameter vector isolates exactly the paths
    BPTT differentiates (gate masks, proxy gradients, router statistics and
    fitness values fed to the embeddings stay pinned at recorded values).
    """

    grads: list = field(default_factory=list)
    masks: list = field(default_factory=list)
    fits: list = field(default_factory=list)
    stats: list = field(default_factory=list)


@dataclass
class Trajectory:
    populations: list
    steps: list
    trace: UnrollTrace | None = None
    objective: object = None
    gradient_mode: str = "analytic"

    @property
    def initial(self) -> Population:
        return self.populations[0]

    @property
    def final(self) -> Population:
        return self.populations[-1]


def unroll(x0: Population, f, params, cfg: InnerConfig,
           synthetic_op=None, record_trace: bool = False,
           trace: UnrollTrace | None = None, capture: bool = False,
           adagrad_state: np.ndarray | None = None,
           step_offset: int = 0) -> Trajectory:
    """Run K composite steps from x0; returns all iterates plus diagnostics.

    `params` is a list of K block parameter sets, or a single-element list
    broadcast across steps (shared mode).  With `synthetic_op` the learned
    operator is replaced by a plain numpy map (theory testbeds).  A recorded
    `trace` replays frozen gate masks / gradients / fitness inputs.
    `adagrad_state` carries the preconditioner accumulator across
    warm-started restarts (updated in place); `step_offset` continues the
    s_k schedule across them.
    """
    k_steps = cfg.k_steps
    if synthetic_op is None and k_steps > 0:
        if params is None or len(params) not in (1, k_steps):
            raise ContractError(
                f"params must have length 1 or {k_steps}, got "
                f"{0 if params is None else len(params)}")
    if trace is not None and len(trace.masks) != k_steps:
        raise ContractError("trace length does not match K")
    pop = x0
    populations = [pop]
    steps: list[StepDiag] = []
    out_trace = UnrollTrace() if record_trace else None
    adagrad = np.zeros_like(x0.x.data) if adagrad_state is None else adagrad_state
    for k in range(k_steps):
        block = None
        if synthetic_op is None:
            block = params[k] if len(params) == cfg.k_steps else params[0]
        replay = trace is not None
        if replay:
            pop = Population(pop.x, trace.fits[k], pop.bounds)
        if out_trace is not None:
            out_trace.fits.append(pop.fit.copy())
        d_il, route_diag = km_step(pop, f, cfg, block, synthetic_op=synthetic_op,
                                   evaluate_result=not replay,
                                   frozen_stats=trace.stats[k] if replay else None)
        if out_trace is not None:
            out_trace.stats.append(route_diag.get("stats"))
        frozen_g = trace.grads[k] if replay else None
        d_ol, g = proxy_grad_direction(pop, f, step_offset + k, cfg,
                                       adagrad_accum=adagrad,
                                       frozen_grad=frozen_g)
        adagrad += g * g
        if replay:
            mask = GateMask(trace.masks[k].copy())
        else:
            # Both candidates are always evaluated so budget accounting is
            # uniform across gate modes (2 candidate evals per step).
            fit_ol = f.evaluate(d_ol.data)
            if cfg.gate_override is not None:
                mask = GateMask(
                    np.full((pop.batch, pop.pop_size, 1), cfg.gate_override))
            else:
                mask = soft_gate(fit_ol, d_il.fit, cfg.tau)
        if out_trace is not None:
            out_trace.grads.append(g.copy())
            out_trace.masks.append(mask.m.copy())
        new_pop, captured = composite_update(pop, d_ol, d_il, mask, f, cfg,
                                             capture=capture)
        diag = StepDiag(
            step=k + 1,
            best_fit=new_pop.best(),
            mean_fit=new_pop.mean(),
            gate_mean=float(mask.m.mean()),
            lambda_ssm=route_diag["lambda_ssm"],
            lambda_attn=route_diag["lambda_attn"],
            residual_norm=float(np.linalg.norm(new_pop.x.data - pop.x.data)),
            capture=captured,
        )
        if not np.all(np.isfinite(new_pop.x.data)):
            raise NumericError(
                f"non-finite population state at inner step {k}; diagnostics: {diag}")
        steps.append(diag)
        populations.append(new_pop)
        pop = new_pop
    return Trajectory(populations, steps, trace=out_trace)
