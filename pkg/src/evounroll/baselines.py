"""Classical optimizers used as performance anchors.

DE is classic rand/1/bin (F = 0.5, CR = 0.9), PSO uses constriction
defaults (w = 0.729, c1 = c2 = 1.49445, velocity clamped to half the box),
and random search is the sanity floor.  All three consume their evaluation
budget exactly, truncating the final generation if needed.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError


@dataclass
class BaselineConfig:
    algorithm: str = "DE"            # RandomSearch | DE | PSO
    pop_size: int = 16
    budget: int = 2000
    de_f: float = 0.5
    de_cr: float = 0.9
    pso_w: float = 0.729
    pso_c1: float = 1.49445
    pso_c2: float = 1.49445
    pso_vclamp_frac: float = 0.5

    def __post_init__(self):
        if self.algorithm not in ("RandomSearch", "DE", "PSO"):
            raise ConfigError(f"unknown baseline {self.algorithm!r}")
        if self.budget < self.pop_size:
            raise ConfigError(
                f"budget {self.budget} smaller than population {self.pop_size}")


@dataclass
class SwarmState:
    x: np.ndarray                # pop x dim
    fit: np.ndarray              # pop
    velocity: np.ndarray | None = None
    pbest_x: np.ndarray | None = None
    pbest_fit: np.ndarray | None = None
    gbest_x: np.ndarray | None = None
    gbest_fit: float = float("inf")
    history: list = field(default_factory=list)   # (best_fit, mean_fit) per step


def _init_state(f, cfg: BaselineConfig, rng: np.random.Generator) -> SwarmState:
    lo, hi = f.bounds
    x = rng.uniform(lo, hi, size=(cfg.pop_size, f.dim))
    fit = f.evaluate(x)
    state = SwarmState(x=x, fit=fit)
    state.velocity = np.zeros_like(x)
    state.pbest_x = x.copy()
    state.pbest_fit = fit.copy()
    best = int(np.argmin(fit))
    state.gbest_x = x[best].copy()
    state.gbest_fit = float(fit[best])
    return state


def rand1bin_trial(x: np.ndarray, i: int, cfg: BaselineConfig,
                   rng: np.random.Generator, lo: float, hi: float) -> np.ndarray:
    """rand/1 mutant + binomial crossover for target i; clamped to the box.

    The forced coordinate j_rand always comes from the mutant, so the trial
    differs from the target in at least one position even at CR = 0.
    """
    n, dim = x.shape
    choices = [j for j in range(n) if j != i]
    r1, r2, r3 = rng.choice(choices, size=3, replace=False)
    mutant = np.clip(x[r1] + cfg.de_f * (x[r2] - x[r3]), lo, hi)
    cross = rng.random(dim) < cfg.de_cr
    cross[rng.integers(dim)] = True
    return np.where(cross, mutant, x[i])


def de_step(state: SwarmState, f, cfg: BaselineConfig, rng: np.random.Generator,
            max_evals: int | None = None) -> int:
    """One rand/1/bin generation with greedy selection.

    Evaluates at most `max_evals` trial points (for exact budget use);
    returns the number of evaluations spent.
    """
    n, dim = state.x.shape
    if n < 4:
        raise ConfigError(f"DE rand/1 needs pop size >= 4, got {n}")
    lo, hi = f.bounds
    spent = 0
    limit = n if max_evals is None else min(n, max_evals)
    for i in range(limit):
        trial = rand1bin_trial(state.x, i, cfg, rng, lo, hi)
        trial_fit = float(f.evaluate(trial))
        spent += 1
        if trial_fit <= state.fit[i]:
            state.x[i] = trial
            state.fit[i] = trial_fit
            if trial_fit < state.gbest_fit:
                state.gbest_fit = trial_fit
                state.gbest_x = trial.copy()
    return spent


def pso_step(state: SwarmState, f, cfg: BaselineConfig, rng: np.random.Generator,
             max_evals: int | None = None) -> int:
    """One constriction-coefficient swarm update with clamped velocities."""
    n, dim = state.x.shape
    lo, hi = f.bounds
    vmax = cfg.pso_vclamp_frac * (hi - lo)
    spent = 0
    limit = n if max_evals is None else min(n, max_evals)
    for i in range(limit):
        r1 = rng.random(dim)
        r2 = rng.random(dim)
        v = (cfg.pso_w * state.velocity[i]
             + cfg.pso_c1 * r1 * (state.pbest_x[i] - state.x[i])
             + cfg.pso_c2 * r2 * (state.gbest_x - state.x[i]))
        state.velocity[i] = np.clip(v, -vmax, vmax)
        state.x[i] = np.clip(state.x[i] + state.velocity[i], lo, hi)
        fit = float(f.evaluate(state.x[i]))
        spent += 1
        state.fit[i] = fit
        if fit < state.pbest_fit[i]:
            state.pbest_fit[i] = fit
            state.pbest_x[i] = state.x[i].copy()
            if fit < state.gbest_fit:
                state.gbest_fit = fit
                state.gbest_x = state.x[i].copy()
    return spent


def random_search(f, budget: int, rng: np.random.Generator,
                  chunk: int = 64) -> tuple[np.ndarray, float, list]:
    """Uniform sampling; returns (best point, best value, history).

    History entries are (evaluations so far, best-so-far, chunk mean).
    """
    if budget < 1:
        raise ConfigError(f"random search needs budget >= 1, got {budget}")
    lo, hi = f.bounds
    best_x = None
    best_val = float("inf")
    history = []
    spent = 0
    while spent < budget:
        take = min(chunk, budget - spent)
        x = rng.uniform(lo, hi, size=(take, f.dim))
        vals = f.evaluate(x)
        spent += take
        i = int(np.argmin(vals))
        if vals[i] < best_val:
            best_val = float(vals[i])
            best_x = x[i].copy()
        history.append((spent, best_val, float(vals.mean())))
    return best_x, best_val, history


def run_baseline(f, cfg: BaselineConfig, rng: np.random.Generator) -> SwarmState:
    """Run one baseline to budget exhaustion; history holds per-generation
    (evaluations so far, best-so-far, population-mean) triples."""
    if cfg.algorithm == "RandomSearch":
        best_x, best_val, history = random_search(f, cfg.budget, rng,
                                                  chunk=cfg.pop_size)
        state = SwarmState(x=best_x[None, :], fit=np.array([best_val]))
        state.gbest_fit = best_val
        state.gbest_x = best_x
        state.history = history
        return state
    state = _init_state(f, cfg, rng)
    spent = cfg.pop_size
    state.history.append((spent, state.gbest_fit, float(state.fit.mean())))
    step = de_step if cfg.algorithm == "DE" else pso_step
    while spent < cfg.budget:
        spent += step(state, f, cfg, rng, max_evals=cfg.budget - spent)
        state.history.append((spent, state.gbest_fit, float(state.fit.mean())))
    return state
