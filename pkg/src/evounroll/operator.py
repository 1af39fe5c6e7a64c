"""The learned evolutionary proposal operator.

One unrolled block embeds the population plus z-scored fitness, runs a
parallel gated-SSM stream and a multi-head self-attention stream over the
population axis, routes between them from population statistics, and emits
a tanh-bounded per-individual update proposal.  Every linear map is kept
spectrally normalized (sigma <= 1) by a hard rescale after each meta-step.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .errors import ConfigError, ContractError, DimensionError
from .tensor import ParamStore, Tensor

FITNESS_EPS = 1e-8
SPECTRAL_ITERS = 20
ROUTER_HIDDEN = 16


class Linear:
    """Weight + bias pair living in a ParamStore."""

    def __init__(self, w: Tensor, b: Tensor, path: str):
        self.w = w
        self.b = b
        self.path = path

    def __call__(self, x: Tensor) -> Tensor:
        return T.add(T.matmul(x, self.w), self.b)


@dataclass
class RouterStats:
    """Population summary feeding the stream router."""

    fitness_std: float
    fitness_range: float
    diversity: float

    def as_array(self) -> np.ndarray:
        return np.array([self.fitness_std, self.fitness_range, self.diversity])


class OperatorBlockParams:
    """All learnable weights of one unrolled block."""

    def __init__(self, prefix: str, dim: int, d_model: int, heads: int, mode: str):
        if mode not in ("ssm", "ff"):
            raise ConfigError(f"unknown operator mode {mode!r}")
        if d_model % heads != 0:
            raise ConfigError(f"d_model {d_model} not divisible by heads {heads}")
        self.prefix = prefix
        self.dim = dim
        self.d_model = d_model
        self.heads = heads
        self.mode = mode
        self.layers: dict[str, Linear] = {}
        self.ln_gain: Tensor | None = None
        self.ln_bias: Tensor | None = None

    def layer(self, name: str) -> Linear:
        return self.layers[name]

    def weight_matrices(self) -> list[tuple[str, Tensor]]:
        return [(lin.path + ".w", lin.w) for lin in self.layers.values()]

    def n_scalars(self) -> int:
        total = sum(lin.w.size + lin.b.size for lin in self.layers.values())
        if self.ln_gain is not None:
            total += self.ln_gain.size + self.ln_bias.size
        return total


def _add_linear(store: ParamStore, params: OperatorBlockParams, name: str,
                n_in: int, n_out: int, rng: np.random.Generator) -> Linear:
    path = f"{params.prefix}.{name}"
    bound = 1.0 / np.sqrt(n_in)
    w = store.add(path + ".w", Tensor(rng.uniform(-bound, bound, size=(n_in, n_out))))
    b = store.add(path + ".b", Tensor(np.zeros(n_out)))
    lin = Linear(w, b, path)
    params.layers[name] = lin
    return lin


# Proposal heads start at a tenth of the base init scale: an untrained block
# then proposes near-zero moves, so the composite update degrades gracefully
# to preconditioned descent, and meta-training grows the heads under the
# spectral cap as they become useful.
HEAD_INIT_SCALE = 0.1


def init_block_params(store: ParamStore, prefix: str, dim: int, d_model: int,
                      heads: int, mode: str, rng: np.random.Generator) -> OperatorBlockParams:
    """Create one block's parameters in `store` and normalize them once."""
    p = OperatorBlockParams(prefix, dim, d_model, heads, mode)
    _add_linear(store, p, "embed", dim + 1, d_model, rng)
    if mode == "ssm":
        _add_linear(store, p, "proj", d_model, 3 * d_model, rng)
        _add_linear(store, p, "gate", d_model, d_model, rng)
        _add_linear(store, p, "phi_in", d_model, d_model, rng)
        p.ln_gain = store.add(f"{prefix}.ln.gain", Tensor(np.ones(d_model)))
        p.ln_bias = store.add(f"{prefix}.ln.bias", Tensor(np.zeros(d_model)))
    else:
        # "ff" ablation: the SSM branch becomes a plain 2-layer map of E.
        _add_linear(store, p, "ff1", d_model, d_model, rng)
        _add_linear(store, p, "ff2", d_model, d_model, rng)
    for name in ("attn_q", "attn_k", "attn_v", "attn_o"):
        _add_linear(store, p, name, d_model, d_model, rng)
    _add_linear(store, p, "router1", 3, ROUTER_HIDDEN, rng)
    _add_linear(store, p, "router2", ROUTER_HIDDEN, 2, rng)
    for name in ("head_m", "head_a"):
        lin = _add_linear(store, p, name, d_model, dim, rng)
        lin.w.data = lin.w.data * HEAD_INIT_SCALE
    normalize_spectra(p)
    return p


# ---------------------------------------------------------------------------
# block forward pieces


def embed(x: Tensor, fit: np.ndarray, p: OperatorBlockParams) -> Tensor:
    """Population + z-scored fitness -> tanh-bounded embedding (B,N,d_model)."""
    b, n, dim = x.shape
    if n < 2:
        raise ContractError(f"embedding needs pop size >= 2, got {n}")
    if dim != p.dim:
        raise DimensionError(f"population dim {dim} does not match block dim {p.dim}")
    fit = np.asarray(fit, dtype=np.float64)
    if fit.shape != (b, n):
        raise DimensionError(f"fitness shape {fit.shape} does not match ({b}, {n})")
    mu = fit.mean(axis=1, keepdims=True)
    sd = fit.std(axis=1, keepdims=True)
    zfit = (fit - mu) / (sd + FITNESS_EPS)
    joined = T.concat_last([x, T.constant(zfit[..., None])])
    return T.tanh(p.layer("embed")(joined))


def ssm_stream(e: Tensor, p: OperatorBlockParams) -> tuple[Tensor, Tensor]:
    """Input-dependent modulation stream.

    Projects E to a positive timescale (softplus), a bounded state map
    (tanh), and a per-feature output scale (sigmoid); the modulated state is
    timescale * state_map * E, element-wise per individual (no scan).
    """
    raw_delta, raw_b, raw_c = T.split_last(p.layer("proj")(e), 3)
    delta = T.softplus(raw_delta)
    b_mat = T.tanh(raw_b)
    m_s = T.mul(T.mul(delta, b_mat), e)
    c_scale = T.sigmoid(raw_c)
    return m_s, c_scale


def gated_fusion(m_s: Tensor, e: Tensor, p: OperatorBlockParams) -> Tensor:
    """LN( z * M_s + (1-z) * u ) with z = sigmoid(gate(E)), u = phi_in(E)."""
    z = T.sigmoid(p.layer("gate")(e))
    u = p.layer("phi_in")(e)
    one_minus = T.add(T.scale(z, -1.0), T.constant(1.0))
    mixed = T.add(T.mul(z, m_s), T.mul(one_minus, u))
    return T.layer_norm(mixed, p.ln_gain, p.ln_bias)


def ff_stream(e: Tensor, p: OperatorBlockParams) -> Tensor:
    return p.layer("ff2")(T.tanh(p.layer("ff1")(e)))


def mhsa(e: Tensor, p: OperatorBlockParams, return_weights: bool = False):
    """Scaled dot-product attention across the population axis, residual added."""
    b, n, dm = e.shape
    h = p.heads
    dh = dm // h

    def heads_view(t: Tensor) -> Tensor:
        return T.transpose(T.reshape(t, (b, n, h, dh)), (0, 2, 1, 3))

    q = heads_view(p.layer("attn_q")(e))
    k = heads_view(p.layer("attn_k")(e))
    v = heads_view(p.layer("attn_v")(e))
    scores = T.scale(T.matmul(q, T.transpose(k, (0, 1, 3, 2))), 1.0 / np.sqrt(dh))
    weights = T.softmax(scores, axis=-1)
    mixed = T.matmul(weights, v)
    merged = T.reshape(T.transpose(mixed, (0, 2, 1, 3)), (b, n, dm))
    out = T.add(p.layer("attn_o")(merged), e)
    if return_weights:
        return out, weights
    return out


def population_stats(x: np.ndarray, fit: np.ndarray) -> np.ndarray:
    """Per-population (std, range, diversity) rows, shape (B, 3).

    Diversity is the mean pairwise Euclidean distance normalized by
    sqrt(dim).
    """
    x = np.asarray(x, dtype=np.float64)
    fit = np.asarray(fit, dtype=np.float64)
    b, n, dim = x.shape
    std = fit.std(axis=1)
    rng_ = fit.max(axis=1) - fit.min(axis=1)
    diffs = x[:, :, None, :] - x[:, None, :, :]
    dists = np.sqrt(np.sum(diffs * diffs, axis=-1))
    diversity = dists.sum(axis=(1, 2)) / (n * (n - 1)) / np.sqrt(dim)
    return np.stack([std, rng_, diversity], axis=-1)


def _route_batch(stats: np.ndarray, p: OperatorBlockParams) -> Tensor:
    """log1p-compressed stats -> softmax routing weights, shape (B, 2)."""
    squeezed = T.constant(np.log1p(np.asarray(stats, dtype=np.float64)))
    hidden = T.tanh(p.layer("router1")(squeezed))
    return T.softmax(p.layer("router2")(hidden), axis=-1)


def route(stats: RouterStats, p: OperatorBlockParams) -> tuple[float, float]:
    """Routing weights (lambda_ssm, lambda_attn) for one population."""
    arr = stats.as_array()
    if not np.all(np.isfinite(arr)):
        raise ContractError(f"router stats must be finite, got {arr}")
    lam = _route_batch(arr[None, :], p).data[0]
    return float(lam[0]), float(lam[1])


def propose(x: Tensor, fit: np.ndarray, p: OperatorBlockParams,
            stats: np.ndarray | None = None) -> Tensor:
    """Full block: bounded update proposal Delta_evo in (-1, 1)^(B,N,dim).

    Router statistics are plain numbers (a non-differentiable input channel,
    like fitness); `stats` lets a frozen replay pin them.  Returns
    (delta, diagnostics) with the mean routing weights and the stats used.
    """
    b = x.shape[0]
    e = embed(x, fit, p)
    if p.mode == "ssm":
        m_s, c_scale = ssm_stream(e, p)
        h_m = T.mul(c_scale, gated_fusion(m_s, e, p))
    else:
        h_m = ff_stream(e, p)
    h_a = mhsa(e, p)
    if stats is None:
        stats = population_stats(x.data, fit)
    lam = _route_batch(stats, p)
    lam_m = T.reshape(T.slice_last(lam, 0, 1), (b, 1, 1))
    lam_a = T.reshape(T.slice_last(lam, 1, 2), (b, 1, 1))
    d_m = T.tanh(p.layer("head_m")(h_m))
    d_a = T.tanh(p.layer("head_a")(h_a))
    delta = T.add(T.mul(lam_m, d_m), T.mul(lam_a, d_a))
    return delta, {"lambda_ssm": float(lam.data[:, 0].mean()),
                   "lambda_attn": float(lam.data[:, 1].mean()),
                   "stats": stats}


# ---------------------------------------------------------------------------
# spectral maintenance


def normalize_spectra(p: OperatorBlockParams) -> None:
    """Rescale every weight matrix to sigma <= 1 (W / max(1, sigma_est)).

    The tiny tolerance keeps re-normalization bit-idempotent: right after a
    rescale the estimate lands within one ulp of 1 and must not trigger a
    second rescale.
    """
    for path, w in p.weight_matrices():
        sigma = T.spectral_norm(w, SPECTRAL_ITERS, seed=T.seed_from_path(path))
        if sigma > 1.0 + 1e-9:
            w.data = w.data / sigma


def spectral_max(p: OperatorBlockParams) -> float:
    """Largest spectral-norm estimate over the block's weight matrices."""
    worst = 0.0
    for path, w in p.weight_matrices():
        sigma = T.spectral_norm(w, SPECTRAL_ITERS, seed=T.seed_from_path(path))
        worst = max(worst, sigma)
    return worst


def _layer_names(mode: str) -> list[str]:
    names = ["embed"]
    if mode == "ssm":
        names += ["proj", "gate", "phi_in"]
    else:
        names += ["ff1", "ff2"]
    names += ["attn_q", "attn_k", "attn_v", "attn_o",
              "router1", "router2", "head_m", "head_a"]
    return names


def blocks_from_store(store: ParamStore, n_blocks: int, dim: int, d_model: int,
                      heads: int, mode: str) -> list[OperatorBlockParams]:
    """Rebuild block views over an existing (e.g. checkpointed) store."""
    blocks = []
    for k in range(n_blocks):
        prefix = f"block{k}"
        p = OperatorBlockParams(prefix, dim, d_model, heads, mode)
        for name in _layer_names(mode):
            path = f"{prefix}.{name}"
            p.layers[name] = Linear(store[path + ".w"], store[path + ".b"], path)
        if mode == "ssm":
            p.ln_gain = store[f"{prefix}.ln.gain"]
            p.ln_bias = store[f"{prefix}.ln.bias"]
        blocks.append(p)
    return blocks
