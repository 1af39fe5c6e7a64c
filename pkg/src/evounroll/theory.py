"""Executable verification of the convergence theory at desk scale.

The synthetic testbeds are restricted to the regime where the averaged
iteration's bound holds exactly: affine maps O(x) = c + Q(x - c) with
symmetric Q whose spectrum lies in [-q_max(alpha), 0], where
q_max = min(1, 2(1-alpha)/alpha).  There |(1-alpha) + alpha*lambda| <=
(1-alpha) for every eigenvalue, so K averaged steps contract the error by
(1-alpha)^K.  Bound-attaining "witness" operators (eigenvalue modulus
exactly 1-alpha) make the bias-decay slope check two-sided.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .benchmarks import ObjectiveFunction
from .errors import ContractError
from .operator import OperatorBlockParams, propose
from .solver import InnerConfig, Population, Trajectory, unroll
from .tensor import Tensor, constant


@dataclass
class SyntheticOperator:
    """A controlled operator with known Lipschitz behavior."""

    kind: str                         # affine-contraction | rotation | learned-block
    lipschitz_target: float
    c: np.ndarray | None = None
    q: np.ndarray | None = None
    fn: object = None                 # learned-block callable
    sample_shape: tuple = (64, 4)
    domain: tuple[float, float] = (-5.0, 5.0)

    def __post_init__(self):
        if self.kind in ("affine-contraction", "rotation"):
            sigma = float(np.linalg.svd(self.q, compute_uv=False)[0])
            if sigma > self.lipschitz_target + 1e-10:
                raise ContractError(
                    f"operator norm {sigma} exceeds target {self.lipschitz_target}")

    def apply(self, x: np.ndarray) -> np.ndarray:
        if self.kind == "learned-block":
            return self.fn(x)
        return self.c + (x - self.c) @ self.q.T

    def fixed_point(self) -> np.ndarray:
        if self.c is None:
            raise ContractError(f"{self.kind} operator has no tracked fixed point")
        return self.c


def q_max_for_alpha(alpha: float) -> float:
    """Largest |eigenvalue| magnitude keeping the (1-alpha)^K bound exact."""
    return min(1.0, 2.0 * (1.0 - alpha) / alpha)


def random_affine_contraction(dim: int, rng: np.random.Generator,
                              alpha: float = 0.5) -> SyntheticOperator:
    """Random symmetric Q with spectrum in [-q_max, 0] and a random center."""
    q_max = q_max_for_alpha(alpha)
    basis, _ = np.linalg.qr(rng.standard_normal((dim, dim)))
    eigs = -rng.uniform(0.0, q_max, size=dim)
    q = basis @ np.diag(eigs) @ basis.T
    c = rng.uniform(-1.0, 1.0, size=dim)
    return SyntheticOperator("affine-contraction", 1.0, c=c, q=q,
                             sample_shape=(dim,))


def rotation_operator(dim: int, rng: np.random.Generator,
                      scale: float = 1.0) -> SyntheticOperator:
    """Isometry (or scaled isometry): Q = scale * (random rotation)."""
    basis, r = np.linalg.qr(rng.standard_normal((dim, dim)))
    basis = basis * np.sign(np.diag(r))
    if np.linalg.det(basis) < 0:
        basis[:, 0] = -basis[:, 0]
    return SyntheticOperator("rotation", scale, c=np.zeros(dim), q=scale * basis,
                             sample_shape=(dim,))


def scaling_operator(dim: int, factor: float) -> SyntheticOperator:
    return SyntheticOperator("affine-contraction", abs(factor),
                             c=np.zeros(dim), q=factor * np.eye(dim),
                             sample_shape=(dim,))


def bias_witness(alpha: float, dim: int = 2) -> SyntheticOperator:
    """Operator whose averaged iteration decays at exactly (1-alpha) per step.

    For alpha >= 2/3 a real eigenvalue -2(1-alpha)/alpha does it; below, a
    rotation with cos(theta) = -alpha / (2(1-alpha)) places the averaged
    eigenvalues on the circle of radius (1-alpha).
    """
    if alpha >= 2.0 / 3.0:
        lam = -2.0 * (1.0 - alpha) / alpha
        q = lam * np.eye(dim)
    else:
        if dim % 2 != 0:
            raise ContractError("rotation witness needs an even dimension")
        cos_t = -alpha / (2.0 * (1.0 - alpha))
        sin_t = np.sqrt(1.0 - cos_t ** 2)
        block = np.array([[cos_t, -sin_t], [sin_t, cos_t]])
        q = np.kron(np.eye(dim // 2), block)
    return SyntheticOperator("affine-contraction", 1.0, c=np.zeros(dim), q=q,
                             sample_shape=(dim,))


def learned_block_operator(block: OperatorBlockParams, fit: np.ndarray,
                           sample_shape: tuple[int, int, int],
                           domain: tuple[float, float] = (-5.0, 5.0)) -> SyntheticOperator:
    """The learned proposal map x -> Delta_evo(x, frozen fitness)."""

    def fn(x: np.ndarray) -> np.ndarray:
        delta, _ = propose(constant(x), fit, block)
        return delta.data

    return SyntheticOperator("learned-block", 1.0, fn=fn,
                             sample_shape=sample_shape, domain=domain)


# ---------------------------------------------------------------------------
# checks


@dataclass
class CheckReport:
    name: str
    passed: bool
    worst_ratio: float
    seed: int
    details: dict = field(default_factory=dict)

    def as_dict(self) -> dict:
        return {"name": self.name, "passed": bool(self.passed),
                "worst_ratio": float(self.worst_ratio), "seed": self.seed,
                "details": self.details}


def km_iterate(op: SyntheticOperator, x0: np.ndarray, alpha: float,
               k_steps: int) -> np.ndarray:
    x = x0.astype(np.float64).copy()
    for _ in range(k_steps):
        x = (1.0 - alpha) * x + alpha * op.apply(x)
    return x


def check_contraction_bound(op: SyntheticOperator, alpha: float, k_steps: int,
                            trials: int, rng: np.random.Generator,
                            d0: float = 1.0, slack: float = 1e-9) -> CheckReport:
    """Every terminal error must satisfy ||x^K - c|| <= (1-alpha)^K * D0."""
    c = op.fixed_point()
    bound = (1.0 - alpha) ** k_steps * d0
    worst = 0.0
    violations = []
    for trial in range(trials):
        direction = rng.standard_normal(c.shape)
        direction /= np.linalg.norm(direction)
        x0 = c + d0 * direction
        err = float(np.linalg.norm(km_iterate(op, x0, alpha, k_steps) - c))
        worst = max(worst, err / bound)
        if err > bound + slack:
            violations.append(trial)
    return CheckReport(
        name="contraction_bound", passed=not violations, worst_ratio=worst,
        seed=-1, details={"alpha": alpha, "K": k_steps, "bound": bound,
                          "violations": violations})


def estimate_lipschitz(op: SyntheticOperator, pairs: int,
                       rng: np.random.Generator) -> float:
    """Max sampled ratio ||O(u)-O(v)|| / ||u-v|| over far and near pairs."""
    if pairs < 100:
        raise ContractError(f"need at least 100 pairs, got {pairs}")
    lo, hi = op.domain
    worst = 0.0
    for i in range(pairs):
        u = rng.uniform(lo, hi, size=op.sample_shape)
        if i % 2 == 0:
            v = rng.uniform(lo, hi, size=op.sample_shape)
        else:
            v = u + 0.5 * rng.standard_normal(op.sample_shape)
        denom = float(np.linalg.norm(u - v))
        if denom == 0.0:
            continue
        ratio = float(np.linalg.norm(op.apply(u) - op.apply(v))) / denom
        worst = max(worst, ratio)
    return worst


def bias_vs_k(op: SyntheticOperator, alpha: float, k_list: list[int],
              rng: np.random.Generator, d0: float = 1.0) -> dict:
    """Terminal squared error against K, with a fitted log-linear slope."""
    c = op.fixed_point()
    direction = rng.standard_normal(c.shape)
    direction /= np.linalg.norm(direction)
    x0 = c + d0 * direction
    errors = []
    for k in k_list:
        err = float(np.linalg.norm(km_iterate(op, x0, alpha, k) - c))
        errors.append(max(err * err, 1e-280))
    if len(k_list) > 1:
        slope, intercept = np.polyfit(np.asarray(k_list, dtype=float),
                                      np.log(errors), 1)
    else:
        slope, intercept = float("nan"), float("nan")
    target = 2.0 * np.log(1.0 - alpha) if alpha < 1.0 else float("-inf")
    return {"k_list": list(k_list), "sq_errors": errors,
            "slope": float(slope), "intercept": float(intercept),
            "target_slope": target}


def residual_sequence(trajectory: Trajectory, op: SyntheticOperator,
                      alpha: float) -> np.ndarray:
    """||NU(x^k) - x^k|| along a solver trajectory, NU the averaged operator."""
    residuals = []
    for pop in trajectory.populations:
        x = pop.x.data
        nu = (1.0 - alpha) * x + alpha * op.apply(x)
        residuals.append(float(np.linalg.norm(nu - x)))
    return np.asarray(residuals)


def check_residual_convergence(residuals: np.ndarray,
                               slack: float = 1e-12,
                               target: float = 1e-3,
                               target_step: int = 500) -> CheckReport:
    """KM residual must be non-increasing and below target by target_step."""
    diffs = np.diff(residuals)
    non_increasing = bool(np.all(diffs <= slack))
    late_ok = bool(residuals[min(target_step, len(residuals) - 1)] < target)
    mid_ok = bool(residuals[min(200, len(residuals) - 1)]
                  <= residuals[min(10, len(residuals) - 1)] + slack)
    worst = float(diffs.max()) if len(diffs) else 0.0
    return CheckReport(
        name="residual_convergence",
        passed=non_increasing and late_ok and mid_ok,
        worst_ratio=worst, seed=-1,
        details={"r10": float(residuals[min(10, len(residuals) - 1)]),
                 "r200": float(residuals[min(200, len(residuals) - 1)]),
                 "r_final": float(residuals[-1]),
                 "non_increasing": non_increasing,
                 "below_target": late_ok})


def residual_testbed(alpha: float = 0.5, kappa: float = 0.3, steps: int = 500,
                     seed: int = 0, rho: float = 0.9,
                     pop_size: int = 8, dim: int = 4) -> tuple[Trajectory, SyntheticOperator]:
    """Run the composite solver against a synthetic contraction.

    The operator is c + rho*R(x - c) with R a rotation (so the averaged map
    is normal and strictly contractive), the fitness is a sphere centered at
    c, and the proxy step uses s_k = kappa/(k+1).  Initial points are kept
    well inside the box so the projection never activates.
    """
    rng = np.random.default_rng(seed)
    op = rotation_operator(dim, rng, scale=rho)
    c = rng.uniform(-1.0, 1.0, size=dim)
    op.c = c
    f = ObjectiveFunction(family="Sphere", dim=dim, shift=c, rotation=None,
                          bounds=(-50.0, 50.0), seed=seed)
    x0 = c + rng.uniform(-2.0, 2.0, size=(1, pop_size, dim))
    pop = Population(Tensor(x0), f.evaluate(x0), f.bounds)
    cfg = InnerConfig(k_steps=steps, alpha=alpha, kappa=kappa)

    def synthetic(x: np.ndarray) -> np.ndarray:
        return op.apply(x)

    trajectory = unroll(pop, f, None, cfg, synthetic_op=synthetic)
    return trajectory, op


# ---------------------------------------------------------------------------
# full suite


def verify_theory(seed: int = 0) -> list[CheckReport]:
    """All theory checks; every report carries its worst observed ratio."""
    from .meta import MetaConfig, init_params  # local import to avoid a cycle

    reports: list[CheckReport] = []
    rng = np.random.default_rng([seed, 0x7E0])

    # Proposition-style contraction bound over 100 random operators.
    worst = 0.0
    all_pass = True
    for i in range(100):
        op = random_affine_contraction(dim=6, rng=rng, alpha=0.5)
        rep = check_contraction_bound(op, alpha=0.5, k_steps=10, trials=3, rng=rng)
        worst = max(worst, rep.worst_ratio)
        all_pass = all_pass and rep.passed
    reports.append(CheckReport("contraction_bound_100ops", all_pass, worst, seed,
                               {"alpha": 0.5, "K": 10,
                                "bound": 0.5 ** 10}))

    # Non-expansiveness estimates on controlled maps.
    rot = rotation_operator(6, rng)
    est_rot = estimate_lipschitz(rot, 200, rng)
    reports.append(CheckReport("lipschitz_rotation", abs(est_rot - 1.0) < 1e-10,
                               est_rot, seed, {}))
    cut = scaling_operator(6, 0.5)
    est_cut = estimate_lipschitz(cut, 200, rng)
    reports.append(CheckReport("lipschitz_half_scaling", abs(est_cut - 0.5) < 1e-10,
                               est_cut, seed, {}))

    # Freshly initialized learned block.
    cfg = MetaConfig(seed=seed, dim=4, d_model=32, heads=4,
                     inner=InnerConfig(k_steps=1))
    store, blocks = init_params(cfg)
    fit = np.abs(rng.standard_normal((2, 8))) + 0.5
    block_op = learned_block_operator(blocks[0], fit, (2, 8, 4))
    est_block = estimate_lipschitz(block_op, 120, rng)
    reports.append(CheckReport("lipschitz_learned_block", est_block <= 1.05,
                               est_block, seed, {"bound": 1.05}))

    # Bias decay versus unroll depth.
    for alpha in (0.3, 0.5, 0.7):
        witness = bias_witness(alpha, dim=4)
        fit_res = bias_vs_k(witness, alpha, [5, 10, 15, 20, 25, 30], rng)
        target = fit_res["target_slope"]
        rel_err = abs(fit_res["slope"] - target) / abs(target)
        rand_op = random_affine_contraction(4, rng, alpha=alpha)
        rand_res = bias_vs_k(rand_op, alpha, [5, 10, 15, 20, 25, 30], rng)
        rand_ok = rand_res["slope"] <= target + 0.1
        reports.append(CheckReport(
            f"bias_decay_alpha_{alpha}", rel_err <= 0.10 and rand_ok,
            rel_err, seed,
            {"witness_slope": fit_res["slope"], "target_slope": target,
             "random_slope": rand_res["slope"]}))

    # Residual convergence of the full composite solver on the testbed.
    trajectory, op = residual_testbed(seed=seed)
    residuals = residual_sequence(trajectory, op, alpha=0.5)
    reports.append(check_residual_convergence(residuals))
    return reports
