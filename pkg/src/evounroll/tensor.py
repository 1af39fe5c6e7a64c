"""Dense f64 tensors with a reverse-mode differentiation tape.

The tape is define-by-run: entering a ``Tape`` context records every
operation built inside it, in topological order, and ``backward`` replays
the records once in reverse.  Everything is float64; the contraction and
gradient checks elsewhere in the package need the full double-precision
mantissa.
"""

from __future__ import annotations

import hashlib
import threading
from typing import Callable, Iterable, Sequence

import numpy as np

from .errors import ContractError, DimensionError, NumericError

_LOCAL = threading.local()


def _tape_stack() -> list["Tape"]:
    stack = getattr(_LOCAL, "stack", None)
    if stack is None:
        stack = []
        _LOCAL.stack = stack
    return stack


def active_tape() -> "Tape | None":
    """The innermost open Tape on this thread, or None outside any."""
    stack = _tape_stack()
    return stack[-1] if stack else None


class Node:
    """One recorded operation: parent node ids plus a vector-Jacobian hook."""

    __slots__ = ("name", "parents", "vjp")

    def __init__(self, name: str, parents: tuple[int, ...], vjp):
        self.name = name
        self.parents = parents
        self.vjp = vjp


class Tape:
    """Append-only operation record, confined to the thread that opened it."""

    def __init__(self):
        self.nodes: list[Node] = []
        self._leaf_ids: dict[int, int] = {}

    def __enter__(self) -> "Tape":
        _tape_stack().append(self)
        return self

    def __exit__(self, exc_type, exc, tb) -> bool:
        _tape_stack().pop()
        return False

    def record(self, name: str, parents: tuple[int, ...], vjp) -> int:
        self.nodes.append(Node(name, parents, vjp))
        return len(self.nodes) - 1

    def leaf_id(self, t: "Tensor") -> int:
        """Node id of `t` treated as an input of this tape (registered once)."""
        nid = self._leaf_ids.get(id(t))
        if nid is None:
            nid = self.record("leaf", (), None)
            self._leaf_ids[id(t)] = nid
        return nid

    def __len__(self) -> int:
        return len(self.nodes)


class Tensor:
    """Row-major float64 array, optionally attached to a tape node."""

    __slots__ = ("data", "tape", "node_id")

    def __init__(self, data, tape: Tape | None = None, node_id: int | None = None):
        arr = np.asarray(data, dtype=np.float64)
        self.data = arr
        self.tape = tape
        self.node_id = node_id

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def size(self) -> int:
        return self.data.size

    def detach(self) -> "Tensor":
        """A constant view of the same values, cut loose from any tape."""
        return Tensor(self.data)

    def copy(self) -> "Tensor":
        return Tensor(self.data.copy())

    def __repr__(self) -> str:
        tag = "" if self.tape is None else f", node={self.node_id}"
        return f"Tensor(shape={self.data.shape}{tag})"

    # Operator sugar; everything routes through the module-level ops so the
    # tape sees one code path.
    def __add__(self, other):
        return add(self, _as_tensor(other))

    def __sub__(self, other):
        return sub(self, _as_tensor(other))

    def __mul__(self, other):
        return mul(self, _as_tensor(other))

    def __rmul__(self, other):
        return mul(_as_tensor(other), self)

    def __neg__(self):
        return scale(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, _as_tensor(other))


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def constant(data) -> Tensor:
    """A tape-free constant tensor."""
    return Tensor(data)


def _node_of(tape: Tape, t: Tensor) -> int:
    if t.tape is tape and t.node_id is not None:
        return t.node_id
    return tape.leaf_id(t)


def _emit(name: str, value: np.ndarray, inputs: Sequence[Tensor], vjp) -> Tensor:
    """Wrap `value` in a Tensor, recording the op if a tape is open."""
    tape = active_tape()
    if tape is None:
        return Tensor(value)
    parents = tuple(_node_of(tape, t) for t in inputs)
    nid = tape.record(name, parents, vjp)
    return Tensor(value, tape=tape, node_id=nid)


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum a broadcast gradient back down to `shape`."""
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, extent in enumerate(shape):
        if extent == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


def _check_broadcast(a: Tensor, b: Tensor, op: str) -> None:
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise DimensionError(f"{op}: shapes {a.shape} and {b.shape} do not broadcast")


# ---------------------------------------------------------------------------
# elementwise ops


def add(a: Tensor, b: Tensor) -> Tensor:
    _check_broadcast(a, b, "add")
    out = a.data + b.data

    def vjp(g):
        return (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape))

    return _emit("add", out, (a, b), vjp)


def sub(a: Tensor, b: Tensor) -> Tensor:
    _check_broadcast(a, b, "sub")
    out = a.data - b.data

    def vjp(g):
        return (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape))

    return _emit("sub", out, (a, b), vjp)


def mul(a: Tensor, b: Tensor) -> Tensor:
    _check_broadcast(a, b, "mul")
    out = a.data * b.data
    ad, bd = a.data, b.data

    def vjp(g):
        return (_unbroadcast(g * bd, a.shape), _unbroadcast(g * ad, b.shape))

    return _emit("mul", out, (a, b), vjp)


def scale(a: Tensor, s: float) -> Tensor:
    s = float(s)
    out = a.data * s

    def vjp(g):
        return (g * s,)

    return _emit("scale", out, (a,), vjp)


# Nearest representable values inside the open intervals (0,1) and (-1,1);
# saturated activations are clipped here so the bounds hold for any input.
_BELOW_ONE = np.nextafter(1.0, 0.0)
_ABOVE_ZERO = np.nextafter(0.0, 1.0)


def stable_sigmoid(d: np.ndarray) -> np.ndarray:
    out = np.where(d >= 0, 1.0 / (1.0 + np.exp(-np.abs(d))),
                   np.exp(-np.abs(d)) / (1.0 + np.exp(-np.abs(d))))
    return np.clip(out, _ABOVE_ZERO, _BELOW_ONE)


def sigmoid(x: Tensor) -> Tensor:
    out = stable_sigmoid(x.data)

    def vjp(g):
        return (g * out * (1.0 - out),)

    return _emit("sigmoid", out, (x,), vjp)


def tanh(x: Tensor) -> Tensor:
    out = np.clip(np.tanh(x.data), -_BELOW_ONE, _BELOW_ONE)

    def vjp(g):
        return (g * (1.0 - out * out),)

    return _emit("tanh", out, (x,), vjp)


def relu(x: Tensor) -> Tensor:
    out = np.maximum(x.data, 0.0)
    mask = (x.data > 0.0).astype(np.float64)

    def vjp(g):
        return (g * mask,)

    return _emit("relu", out, (x,), vjp)


def softplus(x: Tensor) -> Tensor:
    # log(1 + e^x) in its overflow-safe form max(x,0) + log1p(e^-|x|).
    d = x.data
    out = np.maximum(d, 0.0) + np.log1p(np.exp(-np.abs(d)))
    sig = np.where(d >= 0, 1.0 / (1.0 + np.exp(-np.abs(d))),
                   np.exp(-np.abs(d)) / (1.0 + np.exp(-np.abs(d))))

    def vjp(g):
        return (g * sig,)

    return _emit("softplus", out, (x,), vjp)


_ELEMENTWISE: dict[str, Callable] = {
    "add": add,
    "sub": sub,
    "mul": mul,
    "scale": scale,
    "sigmoid": sigmoid,
    "tanh": tanh,
    "relu": relu,
    "softplus": softplus,
}


def elementwise(op: str, *args) -> Tensor:
    """Dispatch an element-wise op by name (add/sub/mul/scale/sigmoid/...)."""
    try:
        fn = _ELEMENTWISE[op]
    except KeyError:
        raise ContractError(f"unknown elementwise op {op!r}")
    return fn(*args)


# ---------------------------------------------------------------------------
# linear algebra and shaping


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.data.ndim < 2 or b.data.ndim < 2:
        raise DimensionError(f"matmul needs matrices, got {a.shape} x {b.shape}")
    if a.shape[-1] != b.shape[-2]:
        raise DimensionError(f"matmul inner dims disagree: {a.shape} x {b.shape}")
    try:
        out = np.matmul(a.data, b.data)
    except ValueError:
        raise DimensionError(f"matmul batch dims do not broadcast: {a.shape} x {b.shape}")
    ad, bd = a.data, b.data

    def vjp(g):
        ga = _unbroadcast(np.matmul(g, np.swapaxes(bd, -1, -2)), a.shape)
        gb = _unbroadcast(np.matmul(np.swapaxes(ad, -1, -2), g), b.shape)
        return (ga, gb)

    return _emit("matmul", out, (a, b), vjp)


def softmax(x: Tensor, axis: int = -1) -> Tensor:
    if x.data.shape == () or x.data.shape[axis] == 0:
        raise DimensionError(f"softmax over empty axis {axis} of shape {x.shape}")
    shifted = x.data - np.max(x.data, axis=axis, keepdims=True)
    e = np.exp(shifted)
    out = e / np.sum(e, axis=axis, keepdims=True)

    def vjp(g):
        inner = np.sum(g * out, axis=axis, keepdims=True)
        return (out * (g - inner),)

    return _emit("softmax", out, (x,), vjp)


LAYER_NORM_EPS = 1e-5


def layer_norm(x: Tensor, gain: Tensor, bias: Tensor) -> Tensor:
    """Normalize the last axis to zero mean / unit variance, then gain+bias."""
    d = x.data
    n = d.shape[-1] if d.ndim else 0
    if n < 2:
        raise DimensionError(f"layer_norm needs last-axis extent >= 2, got shape {x.shape}")
    mu = d.mean(axis=-1, keepdims=True)
    var = d.var(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + LAYER_NORM_EPS)
    xhat = (d - mu) * inv
    out = xhat * gain.data + bias.data
    gd = gain.data

    def vjp(g):
        gx_hat = g * gd
        # d/dx of (x - mu) * inv with mu, var both functions of x.
        m1 = gx_hat.mean(axis=-1, keepdims=True)
        m2 = (gx_hat * xhat).mean(axis=-1, keepdims=True)
        gx = inv * (gx_hat - m1 - xhat * m2)
        ggain = _unbroadcast(g * xhat, gain.shape)
        gbias = _unbroadcast(g, bias.shape)
        return (gx, ggain, gbias)

    return _emit("layer_norm", out, (x, gain, bias), vjp)


def concat_last(parts: Sequence[Tensor]) -> Tensor:
    if not parts:
        raise ContractError("concat_last needs at least one tensor")
    lead = parts[0].shape[:-1]
    for p in parts[1:]:
        if p.shape[:-1] != lead:
            raise DimensionError(
                f"concat_last leading dims differ: {parts[0].shape} vs {p.shape}")
    out = np.concatenate([p.data for p in parts], axis=-1)
    widths = [p.shape[-1] for p in parts]

    def vjp(g):
        grads = []
        start = 0
        for w in widths:
            grads.append(g[..., start:start + w])
            start += w
        return tuple(grads)

    return _emit("concat", out, tuple(parts), vjp)


def slice_last(x: Tensor, start: int, stop: int) -> Tensor:
    out = x.data[..., start:stop]
    shape = x.shape

    def vjp(g):
        full = np.zeros(shape, dtype=np.float64)
        full[..., start:stop] = g
        return (full,)

    return _emit("slice", out, (x,), vjp)


def split_last(x: Tensor, sections: int) -> tuple[Tensor, ...]:
    width = x.shape[-1]
    if width % sections != 0:
        raise DimensionError(f"cannot split last axis {width} into {sections} equal parts")
    step = width // sections
    return tuple(slice_last(x, i * step, (i + 1) * step) for i in range(sections))


def reshape(x: Tensor, shape: tuple[int, ...]) -> Tensor:
    out = x.data.reshape(shape)
    old = x.shape

    def vjp(g):
        return (g.reshape(old),)

    return _emit("reshape", out, (x,), vjp)


def transpose(x: Tensor, axes: tuple[int, ...]) -> Tensor:
    out = np.transpose(x.data, axes)
    inverse = tuple(np.argsort(axes))

    def vjp(g):
        return (np.transpose(g, inverse),)

    return _emit("transpose", out, (x,), vjp)


def clamp(x: Tensor, lo: float, hi: float) -> Tensor:
    """Box projection; gradient passes through wherever the box is inactive."""
    out = np.clip(x.data, lo, hi)
    mask = ((x.data >= lo) & (x.data <= hi)).astype(np.float64)

    def vjp(g):
        return (g * mask,)

    return _emit("clamp", out, (x,), vjp)


def mean_axis(x: Tensor, axis: int, keepdims: bool = False) -> Tensor:
    out = x.data.mean(axis=axis, keepdims=keepdims)
    extent = x.shape[axis]
    shape = x.shape

    def vjp(g):
        if not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g / extent, shape).copy(),)

    return _emit("mean", out, (x,), vjp)


def mean_all(x: Tensor) -> Tensor:
    out = np.asarray(x.data.mean())
    n = x.size
    shape = x.shape

    def vjp(g):
        return (np.full(shape, float(g) / n),)

    return _emit("mean_all", out, (x,), vjp)


def sum_all(x: Tensor) -> Tensor:
    out = np.asarray(x.data.sum())
    shape = x.shape

    def vjp(g):
        return (np.full(shape, float(g)),)

    return _emit("sum_all", out, (x,), vjp)


def custom_op(name: str, value: np.ndarray, inputs: Sequence[Tensor], vjp) -> Tensor:
    """Register an externally computed forward value with its own vjp.

    Used for objective evaluations whose backward rule is an analytic or
    finite-difference gradient rather than a tape composition.
    """
    return _emit(name, np.asarray(value, dtype=np.float64), inputs, vjp)


# ---------------------------------------------------------------------------
# spectral norm estimate (plain numpy; never on the tape)


def seed_from_path(path: str) -> int:
    """Stable 64-bit seed derived from a parameter path."""
    digest = hashlib.sha256(path.encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "little")


def spectral_norm(w, iters: int, seed: int = 7) -> float:
    """Largest-singular-value estimate via power iteration on w^T w.

    The start vector is drawn from `seed`, so estimates are reproducible and
    monotone non-decreasing in `iters` for a fixed start.
    """
    a = w.data if isinstance(w, Tensor) else np.asarray(w, dtype=np.float64)
    if a.ndim != 2:
        raise DimensionError(f"spectral_norm expects a matrix, got shape {a.shape}")
    if iters < 1:
        raise ContractError(f"spectral_norm needs iters >= 1, got {iters}")
    if not a.any():
        return 0.0
    rng = np.random.default_rng(seed)
    v = rng.standard_normal(a.shape[1])
    v /= np.linalg.norm(v)
    for _ in range(iters):
        u = a @ v
        w_next = a.T @ u
        n = np.linalg.norm(w_next)
        if n == 0.0:
            return 0.0
        v = w_next / n
    return float(np.sqrt(v @ (a.T @ (a @ v))))


# ---------------------------------------------------------------------------
# parameter store and reverse sweep


class ParamEntry:
    __slots__ = ("tensor", "trainable")

    def __init__(self, tensor: Tensor, trainable: bool):
        self.tensor = tensor
        self.trainable = trainable


class ParamStore:
    """Named map of parameter tensors with per-entry trainability."""

    def __init__(self):
        self._entries: dict[str, ParamEntry] = {}
        self.grads: dict[str, np.ndarray] = {}

    def add(self, path: str, tensor: Tensor, trainable: bool = True) -> Tensor:
        if path in self._entries:
            raise ContractError(f"duplicate parameter path {path!r}")
        self._entries[path] = ParamEntry(tensor, trainable)
        return tensor

    def __contains__(self, path: str) -> bool:
        return path in self._entries

    def __getitem__(self, path: str) -> Tensor:
        return self._entries[path].tensor

    def trainable(self, path: str) -> bool:
        return self._entries[path].trainable

    def paths(self) -> list[str]:
        return list(self._entries.keys())

    def items(self) -> Iterable[tuple[str, ParamEntry]]:
        return self._entries.items()

    def set_data(self, path: str, data: np.ndarray) -> None:
        entry = self._entries[path]
        if entry.tensor.data.shape != data.shape:
            raise DimensionError(
                f"parameter {path!r} has shape {entry.tensor.data.shape}, got {data.shape}")
        entry.tensor.data = np.asarray(data, dtype=np.float64)

    def snapshot(self) -> dict[str, np.ndarray]:
        return {p: e.tensor.data.copy() for p, e in self._entries.items()}

    def restore(self, snap: dict[str, np.ndarray]) -> None:
        for path, data in snap.items():
            self.set_data(path, data.copy())

    def n_scalars(self, trainable_only: bool = True) -> int:
        return sum(e.tensor.size for e in self._entries.values()
                   if e.trainable or not trainable_only)


def backward(loss: Tensor, store: ParamStore) -> dict[str, np.ndarray]:
    """Reverse sweep from a scalar loss; fills gradient slots in `store`.

    Every trainable parameter receives a gradient array (zeros when it did
    not participate in the loss).  Returns the same map that is stored in
    ``store.grads``.
    """
    if loss.data.size != 1:
        raise ContractError(f"backward needs a scalar loss, got shape {loss.shape}")
    if loss.tape is None or loss.node_id is None:
        raise ContractError("loss is not attached to a tape")
    tape = loss.tape
    pending: dict[int, np.ndarray] = {loss.node_id: np.ones_like(loss.data)}
    leaf_grads: dict[int, np.ndarray] = {}
    for nid in range(loss.node_id, -1, -1):
        g = pending.pop(nid, None)
        if g is None:
            continue
        node = tape.nodes[nid]
        if not np.all(np.isfinite(g)):
            raise NumericError(f"non-finite gradient at node {nid} ({node.name})")
        if node.vjp is None:
            leaf_grads[nid] = g
            continue
        for pid, pg in zip(node.parents, node.vjp(g)):
            if pg is None:
                continue
            acc = pending.get(pid)
            pending[pid] = pg if acc is None else acc + pg
    grads: dict[str, np.ndarray] = {}
    for path, entry in store.items():
        if not entry.trainable:
            continue
        nid = tape._leaf_ids.get(id(entry.tensor))
        g = leaf_grads.get(nid) if nid is not None else None
        if g is None:
            g = np.zeros_like(entry.tensor.data)
        else:
            g = np.asarray(g, dtype=np.float64).reshape(entry.tensor.data.shape)
        grads[path] = g
    store.grads = grads
    return grads
