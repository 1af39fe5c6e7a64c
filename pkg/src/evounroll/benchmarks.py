"""Synthetic black-box objective suite with known optima.

Eight standard function families in plain (un-warped) form, each with a
controllable shift, an optional random rotation, and an additive offset
f_opt.  Evaluation applies z = R(x - shift) and then the family formula,
so the global optimum sits at `shift` for every family (the bi-Rastrigin
family is parameterized so its deeper sphere basin lands on the shift).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, ContractError, DimensionError, ParseError

FAMILIES = (
    "Sphere",
    "Ellipsoidal",
    "Rastrigin",
    "Rosenbrock",
    "BentCigar",
    "Discus",
    "SharpRidge",
    "LunacekBiRastrigin",
)

# Families whose gradient is returned analytically; the rest use central
# differences (h = 1e-6 * max(1, |x_i|)).
ANALYTIC_FAMILIES = frozenset(
    {"Sphere", "Ellipsoidal", "Rosenbrock", "BentCigar", "Discus"})

SMOOTH_FAMILIES = ("Sphere", "Ellipsoidal", "Rosenbrock", "BentCigar")

DEFAULT_BOUNDS = (-5.0, 5.0)
DEFAULT_SHIFT_RANGE = (-4.0, 4.0)

_MU0 = 2.5  # bi-Rastrigin primary basin center


def _ellipsoid_weights(dim: int) -> np.ndarray:
    if dim == 1:
        return np.ones(1)
    return 10.0 ** (6.0 * np.arange(dim) / (dim - 1))


def random_rotation(dim: int, rng: np.random.Generator) -> np.ndarray:
    """Haar-ish rotation: QR of a Gaussian matrix with sign-fixed diagonal."""
    g = rng.standard_normal((dim, dim))
    q, r = np.linalg.qr(g)
    return q * np.sign(np.diag(r))


@dataclass
class ObjectiveFunction:
    """One benchmark instance; immutable after construction."""

    family: str
    dim: int
    shift: np.ndarray
    rotation: np.ndarray | None = None
    f_opt: float = 0.0
    bounds: tuple[float, float] = DEFAULT_BOUNDS
    seed: int = 0
    surrogate_shift: bool = False
    force_fd: bool = False
    _surrogate_amp: float = field(default=0.0, repr=False)
    _surrogate_phase: np.ndarray | None = field(default=None, repr=False)

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise ConfigError(f"unknown function family {self.family!r}")
        self.shift = np.asarray(self.shift, dtype=np.float64)
        if self.shift.shape != (self.dim,):
            raise DimensionError(
                f"shift shape {self.shift.shape} does not match dim {self.dim}")
        if self.rotation is not None:
            self.rotation = np.asarray(self.rotation, dtype=np.float64)
            if self.rotation.shape != (self.dim, self.dim):
                raise DimensionError(
                    f"rotation shape {self.rotation.shape} does not match dim {self.dim}")
        if self.surrogate_shift:
            self._init_surrogate()

    # -- construction -----------------------------------------------------

    @classmethod
    def from_seed(cls, family: str, dim: int, seed: int, rotation: bool = True,
                  shift_range: tuple[float, float] = DEFAULT_SHIFT_RANGE,
                  f_opt: float = 0.0, surrogate_shift: bool = False,
                  force_fd: bool = False) -> "ObjectiveFunction":
        rng = np.random.default_rng(seed)
        shift = rng.uniform(shift_range[0], shift_range[1], size=dim)
        rot = random_rotation(dim, rng) if rotation else None
        return cls(family=family, dim=dim, shift=shift, rotation=rot, f_opt=f_opt,
                   seed=seed, surrogate_shift=surrogate_shift, force_fd=force_fd)

    def descriptor(self) -> str:
        """Replayable text form: family:dim:seed:f_opt:rot:surrogate."""
        rot = 1 if self.rotation is not None else 0
        return (f"{self.family}:{self.dim}:{self.seed}:{self.f_opt!r}:"
                f"{rot}:{1 if self.surrogate_shift else 0}")

    @classmethod
    def from_descriptor(cls, text: str) -> "ObjectiveFunction":
        parts = text.strip().split(":")
        if len(parts) != 6:
            raise ParseError(f"bad function descriptor {text!r}")
        family, dim, seed, f_opt, rot, surrogate = parts
        return cls.from_seed(family, int(dim), int(seed), rotation=bool(int(rot)),
                             f_opt=float(f_opt), surrogate_shift=bool(int(surrogate)))

    # -- evaluation ---------------------------------------------------------

    def _z(self, x: np.ndarray) -> np.ndarray:
        d = x - self.shift
        if self.rotation is not None:
            d = d @ self.rotation.T
        return d

    def _family_value(self, z: np.ndarray) -> np.ndarray:
        fam = self.family
        if fam == "Sphere":
            return np.sum(z * z, axis=-1)
        if fam == "Ellipsoidal":
            return np.sum(_ellipsoid_weights(self.dim) * z * z, axis=-1)
        if fam == "Rastrigin":
            return 10.0 * self.dim + np.sum(
                z * z - 10.0 * np.cos(2.0 * np.pi * z), axis=-1)
        if fam == "Rosenbrock":
            w = z + 1.0
            return np.sum(100.0 * (w[..., :-1] ** 2 - w[..., 1:]) ** 2
                          + (w[..., :-1] - 1.0) ** 2, axis=-1)
        if fam == "BentCigar":
            return z[..., 0] ** 2 + 1e6 * np.sum(z[..., 1:] ** 2, axis=-1)
        if fam == "Discus":
            return 1e6 * z[..., 0] ** 2 + np.sum(z[..., 1:] ** 2, axis=-1)
        if fam == "SharpRidge":
            return z[..., 0] ** 2 + 100.0 * np.sqrt(np.sum(z[..., 1:] ** 2, axis=-1))
        # LunacekBiRastrigin: two-sphere floor plus a cosine ripple, deeper
        # basin centered so the global optimum is exactly at the shift.
        dim = self.dim
        s = 1.0 - 1.0 / (2.0 * np.sqrt(dim + 20.0) - 8.2)
        mu1 = -np.sqrt((_MU0 ** 2 - 1.0) / s)
        y = z + _MU0
        sphere0 = np.sum((y - _MU0) ** 2, axis=-1)
        sphere1 = 1.0 * dim + s * np.sum((y - mu1) ** 2, axis=-1)
        ripple = 10.0 * (dim - np.sum(np.cos(2.0 * np.pi * (y - _MU0)), axis=-1))
        return np.minimum(sphere0, sphere1) + ripple

    def evaluate(self, x: np.ndarray) -> np.ndarray:
        """Objective values for points of shape (..., dim)."""
        x = np.asarray(x, dtype=np.float64)
        if x.shape[-1] != self.dim:
            raise DimensionError(
                f"points have dim {x.shape[-1]}, function has dim {self.dim}")
        val = self._family_value(self._z(x)) + self.f_opt
        if self.surrogate_shift:
            val = val + self._surrogate_field(x)
        return val

    def _analytic_grad_z(self, z: np.ndarray) -> np.ndarray:
        fam = self.family
        if fam == "Sphere":
            return 2.0 * z
        if fam == "Ellipsoidal":
            return 2.0 * _ellipsoid_weights(self.dim) * z
        if fam == "BentCigar":
            w = np.full(self.dim, 1e6)
            w[0] = 1.0
            return 2.0 * w * z
        if fam == "Discus":
            w = np.ones(self.dim)
            w[0] = 1e6
            return 2.0 * w * z
        if fam == "Rosenbrock":
            w = z + 1.0
            g = np.zeros_like(w)
            diff = w[..., :-1] ** 2 - w[..., 1:]
            g[..., :-1] += 400.0 * w[..., :-1] * diff + 2.0 * (w[..., :-1] - 1.0)
            g[..., 1:] += -200.0 * diff
            return g
        raise ContractError(f"{fam} has no analytic gradient")

    def _fd_grad(self, x: np.ndarray) -> np.ndarray:
        g = np.empty_like(x)
        for i in range(self.dim):
            h = 1e-6 * np.maximum(1.0, np.abs(x[..., i]))
            xp = x.copy()
            xm = x.copy()
            xp[..., i] += h
            xm[..., i] -= h
            g[..., i] = (self.evaluate(xp) - self.evaluate(xm)) / (2.0 * h)
        return g

    def gradient(self, x: np.ndarray, mode: str = "analytic") -> np.ndarray:
        """d f / d x for points of shape (..., dim).

        Analytic where the family supports it, central differences otherwise;
        `mode="finite-difference"` (or force_fd) forces differences everywhere
        to emulate true black-box access.
        """
        x = np.asarray(x, dtype=np.float64)
        if x.shape[-1] != self.dim:
            raise DimensionError(
                f"points have dim {x.shape[-1]}, function has dim {self.dim}")
        if mode not in ("analytic", "finite-difference"):
            raise ConfigError(f"unknown gradient mode {mode!r}")
        if uses_fd_gradient(self, mode):
            return self._fd_grad(x)
        g = self._analytic_grad_z(self._z(x))
        if self.rotation is not None:
            g = g @ self.rotation
        return g

    def known_optimum(self) -> np.ndarray:
        return self.shift.copy()

    # -- surrogate-shift perturbation ---------------------------------------

    def _init_surrogate(self):
        rng = np.random.default_rng(self.seed ^ 0x5AB5)
        self._surrogate_phase = rng.uniform(0.0, 2.0 * np.pi, size=self.dim)
        lo, hi = self.bounds
        corners = np.stack([np.full(self.dim, lo), np.full(self.dim, hi),
                            self.shift, np.zeros(self.dim)])
        probe = self._family_value(self._z(corners))
        self._surrogate_amp = 0.05 * float(probe.max() - probe.min())

    def _surrogate_field(self, x: np.ndarray) -> np.ndarray:
        lo, hi = self.bounds
        phase = (x - lo) / (hi - lo) * 2.0 * np.pi * 3.0 + self._surrogate_phase
        return self._surrogate_amp * np.mean(np.cos(phase), axis=-1)


def uses_fd_gradient(f, mode: str = "analytic") -> bool:
    """True when gradient(f, x, mode) runs central differences."""
    inner = f.inner if isinstance(f, CountingObjective) else f
    return (mode == "finite-difference" or inner.force_fd
            or inner.family not in ANALYTIC_FAMILIES or inner.surrogate_shift)


def evaluate(f: ObjectiveFunction, x: np.ndarray) -> np.ndarray:
    return f.evaluate(x)


def gradient(f: ObjectiveFunction, x: np.ndarray, mode: str = "analytic") -> np.ndarray:
    return f.gradient(x, mode=mode)


class CountingObjective:
    """Wrapper that counts every point evaluation, for budget accounting.

    Also tracks the best value over everything it evaluated (candidate
    probes included), recording (count, best) on each improvement; that is
    the best-so-far convention every baseline uses.
    """

    def __init__(self, inner: ObjectiveFunction):
        self.inner = inner
        self.count = 0
        self.best = float("inf")
        self.improvements: list[tuple[int, float]] = []

    @property
    def dim(self) -> int:
        return self.inner.dim

    @property
    def bounds(self) -> tuple[float, float]:
        return self.inner.bounds

    @property
    def f_opt(self) -> float:
        return self.inner.f_opt

    @property
    def family(self) -> str:
        return self.inner.family

    def evaluate(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x)
        self.count += int(np.prod(x.shape[:-1])) if x.ndim > 1 else 1
        values = self.inner.evaluate(x)
        low = float(np.min(values))
        if low < self.best:
            self.best = low
            self.improvements.append((self.count, low))
        return values

    def gradient(self, x: np.ndarray, mode: str = "analytic") -> np.ndarray:
        if uses_fd_gradient(self, mode):
            # Route probes through self so they hit the counter.
            x = np.asarray(x, dtype=np.float64)
            g = np.empty_like(x)
            for i in range(self.inner.dim):
                h = 1e-6 * np.maximum(1.0, np.abs(x[..., i]))
                xp = x.copy()
                xm = x.copy()
                xp[..., i] += h
                xm[..., i] -= h
                g[..., i] = (self.evaluate(xp) - self.evaluate(xm)) / (2.0 * h)
            return g
        return self.inner.gradient(x, mode=mode)

    def known_optimum(self) -> np.ndarray:
        return self.inner.known_optimum()

    def descriptor(self) -> str:
        return self.inner.descriptor()


@dataclass
class TaskDistribution:
    """Distribution over benchmark instances for meta-training."""

    families: dict[str, float]
    dims: tuple[int, ...]
    shift_range: tuple[float, float] = DEFAULT_SHIFT_RANGE
    rotation: bool = False
    seed: int = 0

    def __post_init__(self):
        if not self.families:
            raise ConfigError("task distribution needs at least one family")
        for fam, w in self.families.items():
            if fam not in FAMILIES:
                raise ConfigError(f"unknown function family {fam!r}")
            if w < 0:
                raise ConfigError(f"negative weight for {fam!r}")
        total = sum(self.families.values())
        if total <= 0:
            raise ConfigError("family weights must sum to a positive value")
        self.families = {f: w / total for f, w in self.families.items()}
        if not self.dims:
            raise ConfigError("task distribution needs at least one dimension")


def sample_task(dist: TaskDistribution, rng: np.random.Generator) -> ObjectiveFunction:
    """Draw one function instance; deterministic given the rng state."""
    names = sorted(dist.families.keys())
    weights = np.array([dist.families[n] for n in names])
    family = names[int(rng.choice(len(names), p=weights))]
    dim = int(rng.choice(np.asarray(sorted(dist.dims))))
    inner_seed = int(rng.integers(0, 2 ** 62))
    return ObjectiveFunction.from_seed(
        family, dim, inner_seed, rotation=dist.rotation,
        shift_range=dist.shift_range)
