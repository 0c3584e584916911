"""Dense tensors and a small tape-based reverse-mode differentiator.

Only the kernels the toy ViT and the life predictor need are provided.
A :class:`Tape` records primitive calls while it is active (``with Tape()
as tape:``) and whenever at least one input has ``requires_grad`` set;
:func:`backward` then walks the recorded nodes in reverse.

Outside a tape every op is a plain numpy computation, which is what the
float32 inference path uses.
"""

from __future__ import annotations

import math
import threading
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .errors import ContractError, DimensionError, NumericError

_local = threading.local()


def _stack() -> list:
    stack = getattr(_local, "stack", None)
    if stack is None:
        stack = _local.stack = []
    return stack


def active_tape() -> "Tape | None":
    stack = _stack()
    return stack[-1] if stack else None


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "node_id")
    # make ``ndarray <op> Tensor`` defer to Tensor's reflected operators
    __array_priority__ = 1000

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        arr = np.asarray(data, dtype=dtype)
        if arr.dtype.kind != "f":
            arr = arr.astype(np.float64)
        self.data = arr
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self.node_id: int | None = None

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def size(self) -> int:
        return self.data.size

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else _not_scalar(self)

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def astype(self, dtype) -> "Tensor":
        return Tensor(self.data.astype(dtype))

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}, dtype={self.dtype}{flag})"

    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return add(neg(self), other)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(self, other)

    def __truediv__(self, other):
        if isinstance(other, Tensor):
            return div(self, other)
        return mul(self, 1.0 / other)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, idx):
        return getitem(self, idx)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, *axes):
        return transpose(self, axes or None)

    def sum(self, axis=None, keepdims: bool = False):
        return tsum(self, axis, keepdims)

    def mean(self, axis=None, keepdims: bool = False):
        return mean(self, axis, keepdims)


def _not_scalar(t: Tensor):
    raise ContractError(f"item() needs a single-element tensor, got shape {t.shape}")


@dataclass
class Node:
    op: str
    inputs: tuple
    output: Tensor
    backward: Callable[[np.ndarray], tuple]


@dataclass
class Tape:
    """Ordered record of primitive ops; one per training step."""

    nodes: list = field(default_factory=list)

    def __enter__(self) -> "Tape":
        _stack().append(self)
        return self

    def __exit__(self, *exc) -> None:
        _stack().pop()

    def record(self, op: str, inputs: tuple, output: Tensor, fn) -> int:
        self.nodes.append(Node(op, inputs, output, fn))
        return len(self.nodes) - 1


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _emit(op: str, inputs: tuple, out: np.ndarray, fn) -> Tensor:
    result = Tensor(out)
    tape = active_tape()
    if tape is not None and any(t.requires_grad for t in inputs):
        result.requires_grad = True
        result.node_id = tape.record(op, inputs, result, fn)
    return result


def unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum ``grad`` down to ``shape`` after numpy broadcasting."""
    if grad.shape == tuple(shape):
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


# -- elementwise -----------------------------------------------------------


def add(a: Tensor, b) -> Tensor:
    if not isinstance(b, Tensor):
        return _emit("add_scalar", (a,), a.data + b, lambda g: (g,))
    sa, sb = a.shape, b.shape
    return _emit("add", (a, b), a.data + b.data, lambda g: (unbroadcast(g, sa), unbroadcast(g, sb)))


def sub(a: Tensor, b) -> Tensor:
    if not isinstance(b, Tensor):
        return _emit("sub_scalar", (a,), a.data - b, lambda g: (g,))
    sa, sb = a.shape, b.shape
    return _emit("sub", (a, b), a.data - b.data, lambda g: (unbroadcast(g, sa), -unbroadcast(g, sb)))


def neg(a: Tensor) -> Tensor:
    return _emit("neg", (a,), -a.data, lambda g: (-g,))


def mul(a: Tensor, b) -> Tensor:
    if not isinstance(b, Tensor):
        return _emit("mul_scalar", (a,), a.data * b, lambda g: (g * b,))
    ad, bd = a.data, b.data
    return _emit(
        "mul",
        (a, b),
        ad * bd,
        lambda g: (unbroadcast(g * bd, ad.shape), unbroadcast(g * ad, bd.shape)),
    )


def div(a: Tensor, b: Tensor) -> Tensor:
    ad, bd = a.data, b.data
    out = ad / bd
    return _emit(
        "div",
        (a, b),
        out,
        lambda g: (unbroadcast(g / bd, ad.shape), unbroadcast(-g * out / bd, bd.shape)),
    )


def exp(a: Tensor) -> Tensor:
    out = np.exp(a.data)
    return _emit("exp", (a,), out, lambda g: (g * out,))


def log(a: Tensor) -> Tensor:
    ad = a.data
    return _emit("log", (a,), np.log(ad), lambda g: (g / ad,))


def sqrt(a: Tensor) -> Tensor:
    out = np.sqrt(a.data)

    def fn(g):
        # zero at the origin keeps floored-std paths finite
        with np.errstate(divide="ignore", invalid="ignore"):
            return (np.where(out > 0, g * 0.5 / out, 0.0),)

    return _emit("sqrt", (a,), out, fn)


def sigmoid(a: Tensor) -> Tensor:
    # tanh form never overflows
    out = 0.5 * (1.0 + np.tanh(0.5 * a.data))
    return _emit("sigmoid", (a,), out, lambda g: (g * out * (1.0 - out),))


def clamp_min(a: Tensor, lo: float) -> Tensor:
    ad = a.data
    keep = ad >= lo
    return _emit("clamp_min", (a,), np.where(keep, ad, lo).astype(ad.dtype), lambda g: (g * keep,))


_GELU_C = math.sqrt(2.0 / math.pi)


def gelu(a: Tensor) -> Tensor:
    """GELU, tanh approximation."""
    x = a.data
    th = np.tanh(_GELU_C * (x + 0.044715 * (x * x * x)))
    out = 0.5 * x * (1.0 + th)

    def fn(g):
        dth = (1.0 - th * th) * _GELU_C * (1.0 + 3 * 0.044715 * x * x)
        return (g * (0.5 * (1.0 + th) + 0.5 * x * dth),)

    return _emit("gelu", (a,), out, fn)


# -- shape ------------------------------------------------------------------


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.ndim < 2 or b.ndim < 2:
        raise DimensionError(f"matmul needs rank >= 2 operands, got {a.shape} and {b.shape}")
    if a.shape[-1] != b.shape[-2]:
        raise DimensionError(f"matmul inner extents differ: {a.shape} x {b.shape}")
    ad, bd = a.data, b.data

    def fn(g):
        ga = unbroadcast(g @ np.swapaxes(bd, -1, -2), ad.shape)
        if bd.ndim == 2 and ad.ndim > 2:
            # shared weight: fold the batch axes into one GEMM
            gb = ad.reshape(-1, ad.shape[-1]).T @ g.reshape(-1, g.shape[-1])
        else:
            gb = unbroadcast(np.swapaxes(ad, -1, -2) @ g, bd.shape)
        return ga, gb

    return _emit("matmul", (a, b), ad @ bd, fn)


def reshape(a: Tensor, shape) -> Tensor:
    src = a.shape
    return _emit("reshape", (a,), a.data.reshape(shape), lambda g: (g.reshape(src),))


def transpose(a: Tensor, axes=None) -> Tensor:
    if axes is None:
        axes = tuple(range(a.ndim))[::-1]
    inv = tuple(np.argsort(axes))
    return _emit("transpose", (a,), a.data.transpose(axes), lambda g: (g.transpose(inv),))


def swap_last(a: Tensor) -> Tensor:
    axes = list(range(a.ndim))
    axes[-1], axes[-2] = axes[-2], axes[-1]
    return transpose(a, tuple(axes))


def getitem(a: Tensor, idx) -> Tensor:
    src_shape, dt = a.shape, a.dtype

    def fn(g):
        full = np.zeros(src_shape, dtype=dt)
        np.add.at(full, idx, g)
        return (full,)

    return _emit("getitem", (a,), a.data[idx], fn)


def gather_rows(x: Tensor, idx: np.ndarray) -> Tensor:
    """Per-batch row gather: ``x[b, idx[b, k], :]`` for x of shape (B, M, d)."""
    idx = np.asarray(idx)
    if idx.ndim != 2 or idx.shape[0] != x.shape[0]:
        raise DimensionError(f"gather index {idx.shape} does not match batch {x.shape}")
    out = np.take_along_axis(x.data, idx[:, :, None], axis=1)
    src_shape, dt = x.shape, x.dtype

    def fn(g):
        full = np.zeros(src_shape, dtype=dt)
        # repeated indices must accumulate
        np.add.at(full, (np.arange(src_shape[0])[:, None], idx), g)
        return (full,)

    return _emit("gather_rows", (x,), out, fn)


def concat(parts: Sequence[Tensor], axis: int = 0) -> Tensor:
    parts = tuple(parts)
    sizes = np.cumsum([p.shape[axis] for p in parts])[:-1]

    def fn(g):
        return tuple(np.split(g, sizes, axis=axis))

    return _emit("concat", parts, np.concatenate([p.data for p in parts], axis=axis), fn)


def broadcast_to(a: Tensor, shape) -> Tensor:
    src = a.shape
    out = np.broadcast_to(a.data, shape).copy()
    return _emit("broadcast_to", (a,), out, lambda g: (unbroadcast(g, src),))


def tsum(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    src = a.shape

    def fn(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, src).copy(),)

    return _emit("sum", (a,), np.asarray(a.data.sum(axis=axis, keepdims=keepdims)), fn)


def mean(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    if axis is None:
        count = a.size
    else:
        axes = axis if isinstance(axis, tuple) else (axis,)
        count = int(np.prod([a.shape[i] for i in axes]))
    return mul(tsum(a, axis, keepdims), 1.0 / count)


# -- fused kernels ----------------------------------------------------------


def softmax_rows(x: Tensor) -> Tensor:
    """Softmax over the last axis with max subtraction."""
    xd = x.data
    if np.isnan(xd).any():
        raise NumericError("softmax_rows received NaN input")
    e = np.exp(xd - xd.max(axis=-1, keepdims=True))
    out = e / e.sum(axis=-1, keepdims=True)

    def fn(g):
        return (out * (g - (g * out).sum(axis=-1, keepdims=True)),)

    return _emit("softmax_rows", (x,), out, fn)


def weighted_softmax(h: Tensor, beta: Tensor, floor: float = 1e-12) -> Tensor:
    """Row-normalised ``beta_j * exp(h_ij)``; ``beta`` broadcasts along the last axis.

    Entries with ``beta_j == 0`` contribute exactly zero, so a binary
    ``beta`` reproduces attention over the surviving keys only.
    """
    hd, bd = h.data, beta.data
    if np.isnan(hd).any() or np.isnan(bd).any():
        raise NumericError("weighted_softmax received NaN input")
    with np.errstate(divide="ignore", over="ignore"):
        logb = np.log(bd)
        shifted = hd + logb
        top = shifted.max(axis=-1, keepdims=True)
        top = np.where(np.isfinite(top), top, 0.0)
        w = np.exp(shifted - top)
        denom = np.maximum(w.sum(axis=-1, keepdims=True), floor)
        out = w / denom

    def fn(g):
        s = (g * out).sum(axis=-1, keepdims=True)
        gh = out * (g - s)
        # d out_ij / d beta_l = exp(h_il - top) / denom * (delta_jl - out_ij)
        with np.errstate(over="ignore"):
            plain = np.exp(hd - top) / denom
        gb = unbroadcast(plain * (g - s), bd.shape)
        return gh, gb

    return _emit("weighted_softmax", (h, beta), out, fn)


def layer_norm(x: Tensor, gamma: Tensor, beta: Tensor, eps: float = 1e-5) -> Tensor:
    """Normalise the last axis with population statistics, then scale and shift."""
    xd = x.data
    d = xd.shape[-1]
    if d < 1:
        raise DimensionError("layer_norm needs a non-empty feature axis")
    mu = xd.mean(axis=-1, keepdims=True)
    xc = xd - mu
    inv = 1.0 / np.sqrt((xc * xc).mean(axis=-1, keepdims=True) + eps)
    xhat = xc * inv
    gd = gamma.data
    out = xhat * gd + beta.data

    def fn(g):
        dxhat = g * gd
        dx = inv / d * (
            d * dxhat
            - dxhat.sum(axis=-1, keepdims=True)
            - xhat * (dxhat * xhat).sum(axis=-1, keepdims=True)
        )
        return dx, unbroadcast(g * xhat, gd.shape), unbroadcast(g, beta.shape)

    return _emit("layer_norm", (x, gamma, beta), out, fn)


def cross_entropy(logits: Tensor, labels) -> Tensor:
    """Mean of ``-log softmax(logits)[label]`` over the batch (logits shape (B, C))."""
    labels = np.asarray(labels, dtype=np.int64).reshape(-1)
    ld = logits.data
    if ld.ndim != 2 or ld.shape[0] != labels.shape[0]:
        raise DimensionError(f"logits {ld.shape} do not match {labels.shape[0]} labels")
    if not np.isfinite(ld).all():
        raise NumericError("cross_entropy received non-finite logits")
    top = ld.max(axis=1, keepdims=True)
    e = np.exp(ld - top)
    z = e.sum(axis=1, keepdims=True)
    rows = np.arange(len(labels))
    nll = (np.log(z[:, 0]) + top[:, 0]) - ld[rows, labels]
    probs = e / z

    def fn(g):
        grad = probs.copy()
        grad[rows, labels] -= 1.0
        return (grad * (g / len(labels)),)

    return _emit("cross_entropy", (logits,), np.asarray(nll.mean()), fn)


# -- reverse pass -----------------------------------------------------------


def backward(tape: Tape, loss: Tensor) -> list:
    """Populate ``.grad`` on every leaf recorded on ``tape``; returns those leaves.

    Leaves that do not reach ``loss`` receive zero gradients.
    """
    if loss.size != 1:
        raise ContractError(f"backward needs a scalar loss, got shape {loss.shape}")
    leaves: dict = {}
    for node in tape.nodes:
        for t in node.inputs:
            if t.requires_grad and t.node_id is None:
                leaves.setdefault(id(t), t)
    grads: dict = {}
    if loss.node_id is None:
        if id(loss) not in leaves and not loss.requires_grad:
            raise ContractError("loss was not recorded on this tape")
        grads[id(loss)] = np.ones_like(loss.data)
        leaves.setdefault(id(loss), loss)
    else:
        grads[id(loss)] = np.ones_like(loss.data)
        for node in reversed(tape.nodes[: loss.node_id + 1]):
            g = grads.pop(id(node.output), None)
            if g is None:
                continue
            for t, gi in zip(node.inputs, node.backward(g)):
                if gi is None or not t.requires_grad:
                    continue
                key = id(t)
                grads[key] = grads[key] + gi if key in grads else gi
    out = []
    for key, leaf in leaves.items():
        g = grads.get(key)
        leaf.grad = np.zeros_like(leaf.data) if g is None else np.asarray(g, dtype=leaf.dtype).reshape(leaf.shape)
        out.append(leaf)
    return out
