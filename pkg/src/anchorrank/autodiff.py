"""Dense float64 tensors with tape-based reverse-mode gradients.

Small define-by-run engine: every differentiable op appends an entry to the
active tape, :func:`backward` replays the tape once in reverse and clears
it. Everything is double precision and every op refuses to emit NaN/Inf.
Sized for models with a few hundred thousand parameters, not for GPUs.
"""

from __future__ import annotations

import math
from contextlib import contextmanager
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterator, Mapping, Sequence

import numpy as np


class AutodiffError(RuntimeError):
    """Shape mismatch, non-finite value, or tape misuse."""


class Tensor:
    """A dense float64 array plus an optional gradient of the same shape."""

    __slots__ = ("data", "requires_grad", "grad")

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.asarray(data, dtype=np.float64)
        self.requires_grad = bool(requires_grad)
        self.grad: np.ndarray | None = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        return float(self.data.reshape(-1)[0])

    def zero_grad(self) -> None:
        self.grad = None

    def backward(self) -> None:
        backward(self)

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __neg__(self):
        return scalar_mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)


def constant(data) -> Tensor:
    return Tensor(data, requires_grad=False)


def parameter(data) -> Tensor:
    return Tensor(data, requires_grad=True)


@dataclass
class TapeEntry:
    op: str
    inputs: tuple[Tensor, ...]
    output: Tensor
    grad_fn: Callable[[np.ndarray], tuple[np.ndarray | None, ...]]


@dataclass
class Tape:
    """Ordered record of executed ops; creation order is topological order."""

    entries: list[TapeEntry] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.entries)

    def clear(self) -> None:
        self.entries.clear()


_TAPE = Tape()
_GRAD_ENABLED = True


def get_tape() -> Tape:
    return _TAPE


def reset_tape() -> None:
    _TAPE.clear()


@contextmanager
def no_grad() -> Iterator[None]:
    """Run ops without recording them (inference mode)."""
    global _GRAD_ENABLED
    prev = _GRAD_ENABLED
    _GRAD_ENABLED = False
    try:
        yield
    finally:
        _GRAD_ENABLED = prev


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _emit(
    op: str,
    out_data: np.ndarray,
    inputs: tuple[Tensor, ...],
    grad_fn: Callable[[np.ndarray], tuple[np.ndarray | None, ...]],
) -> Tensor:
    if not np.isfinite(out_data).all():
        raise AutodiffError(f"{op}: produced a non-finite result")
    track = _GRAD_ENABLED and any(t.requires_grad for t in inputs)
    out = Tensor(out_data, requires_grad=track)
    if track:
        _TAPE.entries.append(TapeEntry(op, inputs, out, grad_fn))
    return out


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum a broadcast gradient back down to ``shape``."""
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, dim in enumerate(shape):
        if dim == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad.reshape(shape)


# ---------------------------------------------------------------------------
# elementwise and structural ops


def add(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    try:
        out = a.data + b.data
    except ValueError:
        raise AutodiffError(f"add: incompatible shapes {a.shape} and {b.shape}") from None
    return _emit(
        "add",
        out,
        (a, b),
        lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)),
    )


def sub(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    try:
        out = a.data - b.data
    except ValueError:
        raise AutodiffError(f"sub: incompatible shapes {a.shape} and {b.shape}") from None
    return _emit(
        "sub",
        out,
        (a, b),
        lambda g: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)),
    )


def mul(a, b) -> Tensor:
    """Elementwise (Hadamard) product with numpy broadcasting."""
    a, b = _as_tensor(a), _as_tensor(b)
    try:
        out = a.data * b.data
    except ValueError:
        raise AutodiffError(f"mul: incompatible shapes {a.shape} and {b.shape}") from None
    return _emit(
        "mul",
        out,
        (a, b),
        lambda g: (_unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)),
    )


hadamard = mul


def scalar_mul(a, c: float) -> Tensor:
    a = _as_tensor(a)
    c = float(c)
    return _emit("scalar_mul", a.data * c, (a,), lambda g: (g * c,))


def matmul(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise AutodiffError(f"matmul: incompatible shapes {a.shape} and {b.shape}")
    return _emit(
        "matmul",
        a.data @ b.data,
        (a, b),
        lambda g: (g @ b.data.T, a.data.T @ g),
    )


def transpose(a) -> Tensor:
    a = _as_tensor(a)
    if a.ndim != 2:
        raise AutodiffError(f"transpose: expected a matrix, got shape {a.shape}")
    return _emit("transpose", a.data.T.copy(), (a,), lambda g: (g.T.copy(),))


def reshape(a, shape: Sequence[int]) -> Tensor:
    a = _as_tensor(a)
    shape = tuple(shape)
    try:
        out = a.data.reshape(shape)
    except ValueError:
        raise AutodiffError(f"reshape: cannot view {a.shape} as {shape}") from None
    orig = a.shape
    return _emit("reshape", out.copy(), (a,), lambda g: (g.reshape(orig),))


def concat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    ts = [_as_tensor(t) for t in tensors]
    if not ts:
        raise AutodiffError("concat: need at least one tensor")
    try:
        out = np.concatenate([t.data for t in ts], axis=axis)
    except ValueError:
        raise AutodiffError(
            f"concat: incompatible shapes {[t.shape for t in ts]} along axis {axis}"
        ) from None
    sizes = [t.shape[axis] for t in ts]

    def grad_fn(g: np.ndarray):
        pieces = np.split(g, np.cumsum(sizes)[:-1], axis=axis)
        return tuple(pieces)

    return _emit("concat", out, tuple(ts), grad_fn)


def narrow(a, axis: int, start: int, stop: int) -> Tensor:
    """Slice ``a`` along ``axis`` to the half-open range [start, stop)."""
    a = _as_tensor(a)
    if not (0 <= start < stop <= a.shape[axis]):
        raise AutodiffError(
            f"narrow: range [{start}, {stop}) invalid for shape {a.shape} axis {axis}"
        )
    index = [slice(None)] * a.ndim
    index[axis] = slice(start, stop)
    index = tuple(index)

    def grad_fn(g: np.ndarray):
        full = np.zeros_like(a.data)
        full[index] = g
        return (full,)

    return _emit("narrow", a.data[index].copy(), (a,), grad_fn)


def relu(a) -> Tensor:
    a = _as_tensor(a)
    mask = a.data > 0
    return _emit("relu", np.where(mask, a.data, 0.0), (a,), lambda g: (g * mask,))


def sigmoid(a) -> Tensor:
    a = _as_tensor(a)
    x = a.data
    out = np.where(x >= 0, 1.0 / (1.0 + np.exp(-np.abs(x))), np.exp(-np.abs(x)) / (1.0 + np.exp(-np.abs(x))))
    return _emit("sigmoid", out, (a,), lambda g: (g * out * (1.0 - out),))


def softmax(a, axis: int = -1) -> Tensor:
    a = _as_tensor(a)
    if not (-a.ndim <= axis < a.ndim):
        raise AutodiffError(f"softmax: axis {axis} invalid for shape {a.shape}")
    shifted = a.data - a.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    out = e / e.sum(axis=axis, keepdims=True)

    def grad_fn(g: np.ndarray):
        dot = (g * out).sum(axis=axis, keepdims=True)
        return ((g - dot) * out,)

    return _emit("softmax", out, (a,), grad_fn)


def layer_norm(a, eps: float = 1e-5) -> Tensor:
    """Normalize the last axis to zero mean and unit variance."""
    a = _as_tensor(a)
    x = a.data
    mu = x.mean(axis=-1, keepdims=True)
    var = ((x - mu) ** 2).mean(axis=-1, keepdims=True)
    std = np.sqrt(var + eps)
    y = (x - mu) / std

    def grad_fn(g: np.ndarray):
        gm = g.mean(axis=-1, keepdims=True)
        gy = (g * y).mean(axis=-1, keepdims=True)
        return ((g - gm - y * gy) / std,)

    return _emit("layer_norm", y, (a,), grad_fn)


def _reduce(op: str, a, axis, keepdims: bool, np_fn, scale_fn) -> Tensor:
    a = _as_tensor(a)
    out = np_fn(a.data, axis=axis, keepdims=keepdims)
    in_shape = a.shape

    def grad_fn(g: np.ndarray):
        g = np.asarray(g, dtype=np.float64)
        if axis is None:
            expanded = np.broadcast_to(g, in_shape)
        else:
            if not keepdims:
                g = np.expand_dims(g, axis=axis)
            expanded = np.broadcast_to(g, in_shape)
        return (expanded * scale_fn(),)

    return _emit(op, np.asarray(out, dtype=np.float64), (a,), grad_fn)


def tsum(a, axis: int | None = None, keepdims: bool = False) -> Tensor:
    return _reduce("sum", a, axis, keepdims, np.sum, lambda: 1.0)


def mean(a, axis: int | None = None, keepdims: bool = False) -> Tensor:
    a_t = _as_tensor(a)
    denom = a_t.size if axis is None else a_t.shape[axis]
    return _reduce("mean", a_t, axis, keepdims, np.mean, lambda: 1.0 / denom)


# ---------------------------------------------------------------------------
# composites and losses

BCE_EPS = 1e-7


def attention(q: Tensor, k: Tensor, v: Tensor) -> Tensor:
    """Scaled dot-product attention: softmax(q kᵀ / sqrt(d)) v."""
    if q.ndim != 2 or k.ndim != 2 or v.ndim != 2:
        raise AutodiffError("attention: q, k, v must be matrices")
    if q.shape[1] != k.shape[1]:
        raise AutodiffError(f"attention: query dim {q.shape} != key dim {k.shape}")
    if k.shape[0] != v.shape[0]:
        raise AutodiffError(f"attention: key rows {k.shape} != value rows {v.shape}")
    scores = scalar_mul(matmul(q, transpose(k)), 1.0 / math.sqrt(q.shape[1]))
    return matmul(softmax(scores, axis=-1), v)


def bce(pred: Tensor, target) -> Tensor:
    """Mean binary cross entropy; predictions are clamped to [eps, 1-eps].

    The target is treated as a constant: no gradient flows into it.
    """
    pred = _as_tensor(pred)
    tgt = np.asarray(target.data if isinstance(target, Tensor) else target, dtype=np.float64)
    if pred.shape != tgt.shape:
        raise AutodiffError(f"bce: pred shape {pred.shape} != target shape {tgt.shape}")
    p = np.clip(pred.data, BCE_EPS, 1.0 - BCE_EPS)
    n = max(p.size, 1)
    loss = float(-(tgt * np.log(p) + (1.0 - tgt) * np.log1p(-p)).sum() / n)
    inside = (pred.data > BCE_EPS) & (pred.data < 1.0 - BCE_EPS)

    def grad_fn(g: np.ndarray):
        base = (p - tgt) / (p * (1.0 - p) * n)
        return (g * np.where(inside, base, 0.0),)

    return _emit("bce", np.asarray(loss), (pred,), grad_fn)


# ---------------------------------------------------------------------------
# backward pass


def backward(loss: Tensor) -> None:
    """Populate ``grad`` on every tensor the scalar ``loss`` depends on.

    Walks the active tape once in reverse and clears it afterwards.
    """
    if loss.size != 1:
        raise AutodiffError(f"backward: loss must be scalar, got shape {loss.shape}")
    loss.grad = np.ones_like(loss.data)
    for entry in reversed(_TAPE.entries):
        g_out = entry.output.grad
        if g_out is None:
            continue
        grads = entry.grad_fn(g_out)
        for t, g in zip(entry.inputs, grads):
            if g is None or not t.requires_grad:
                continue
            g = np.asarray(g, dtype=np.float64).reshape(t.shape)
            t.grad = g.copy() if t.grad is None else t.grad + g
    _TAPE.clear()


# ---------------------------------------------------------------------------
# optimizer


@dataclass
class AdamState:
    """Adam moments and hyperparameters for one named parameter set."""

    lr: float = 5e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)


def adam_step(params: Mapping[str, Tensor], state: AdamState) -> None:
    """One bias-corrected Adam update, in place; requires populated grads."""
    missing = [name for name, t in params.items() if t.grad is None]
    if missing:
        raise AutodiffError(f"adam_step: missing grads for {missing[:5]}")
    state.step += 1
    t = state.step
    b1, b2 = state.beta1, state.beta2
    for name, p in params.items():
        g = p.grad
        if name not in state.m:
            state.m[name] = np.zeros_like(p.data)
            state.v[name] = np.zeros_like(p.data)
        m = state.m[name]
        v = state.v[name]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        m_hat = m / (1.0 - b1**t)
        v_hat = v / (1.0 - b2**t)
        p.data -= state.lr * m_hat / (np.sqrt(v_hat) + state.eps)
        if not np.isfinite(p.data).all():
            raise AutodiffError(f"adam_step: parameter {name!r} became non-finite")


def zero_grads(params: Mapping[str, Tensor]) -> None:
    for p in params.values():
        p.zero_grad()


def fill_missing_grads(params: Mapping[str, Tensor]) -> None:
    """Give an explicit zero gradient to parameters the loss did not touch."""
    for p in params.values():
        if p.grad is None:
            p.grad = np.zeros_like(p.data)


# ---------------------------------------------------------------------------
# checkpoint I/O

CHECKPOINT_MAGIC = b"ARNK"
CHECKPOINT_VERSION = 1


class CheckpointError(RuntimeError):
    """A checkpoint file is missing, truncated, or inconsistent."""


def save_checkpoint(
    path: str | Path,
    params: Mapping[str, Tensor | np.ndarray],
    meta: Mapping | None = None,
) -> None:
    """Write named float64 arrays to a single versioned binary file.

    The byte layout is deterministic (names sorted, little-endian raw data),
    so identical parameters always produce identical files.
    """
    import json as _json

    names = sorted(params)
    header = {
        "version": CHECKPOINT_VERSION,
        "meta": dict(meta or {}),
        "tensors": [],
    }
    blobs = []
    for name in names:
        p = params[name]
        arr = np.asarray(p.data if isinstance(p, Tensor) else p, dtype="<f8")
        header["tensors"].append({"name": name, "shape": list(arr.shape)})
        blobs.append(arr.tobytes(order="C"))
    header_bytes = _json.dumps(header, sort_keys=True).encode("utf-8")
    with Path(path).open("wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(CHECKPOINT_VERSION.to_bytes(4, "little"))
        fh.write(len(header_bytes).to_bytes(8, "little"))
        fh.write(header_bytes)
        for blob in blobs:
            fh.write(blob)


def load_checkpoint(path: str | Path) -> tuple[dict[str, np.ndarray], dict]:
    """Read a checkpoint back into arrays; bit-exact with what was saved."""
    import json as _json

    raw = Path(path).read_bytes()
    if raw[:4] != CHECKPOINT_MAGIC:
        raise CheckpointError(f"{path}: not a checkpoint file")
    version = int.from_bytes(raw[4:8], "little")
    if version != CHECKPOINT_VERSION:
        raise CheckpointError(f"{path}: unsupported checkpoint version {version}")
    header_len = int.from_bytes(raw[8:16], "little")
    header = _json.loads(raw[16 : 16 + header_len].decode("utf-8"))
    offset = 16 + header_len
    out: dict[str, np.ndarray] = {}
    for entry in header["tensors"]:
        shape = tuple(entry["shape"])
        count = int(np.prod(shape)) if shape else 1
        end = offset + 8 * count
        if end > len(raw):
            raise CheckpointError(f"{path}: truncated tensor {entry['name']!r}")
        arr = np.frombuffer(raw[offset:end], dtype="<f8").astype(np.float64).reshape(shape)
        out[entry["name"]] = arr
        offset = end
    if offset != len(raw):
        raise CheckpointError(f"{path}: trailing bytes after tensor data")
    return out, header.get("meta", {})
