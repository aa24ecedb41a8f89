"""Minimal float64 tensor engine with reverse-mode automatic differentiation.

Every tensor produced by an op gets a monotonically increasing ``node_id``;
the ids act as an append-only tape, and ``backward`` replays the reachable
part of it in strict reverse insertion order. Broadcasting is deliberately
narrow: an operand may only be repeated over *leading* axes (a row vector
over a matrix, a matrix over a batch). Anything richer raises
``ShapeMismatch``.
"""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .errors import EmptyAxis, NonFinite, NotScalar, ShapeMismatch

_node_ids = itertools.count()

GELU_C = math.sqrt(2.0 / math.pi)
GELU_A = 0.044715


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "node_id", "op", "parents", "_backward", "name")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        self.data = np.ascontiguousarray(np.array(data, dtype=np.float64))
        self.requires_grad = requires_grad
        self.grad = np.zeros_like(self.data) if requires_grad else None
        self.node_id = next(_node_ids)
        self.op = "leaf"
        self.parents: tuple[Tensor, ...] = ()
        self._backward = None
        self.name = name

    @classmethod
    def from_op(cls, data: np.ndarray, parents: Sequence["Tensor"], op: str,
                backward: Callable[[np.ndarray], Sequence[np.ndarray | None]]) -> "Tensor":
        """Record a graph node. ``backward(g)`` returns one gradient per parent."""
        out = cls.__new__(cls)
        out.data = np.ascontiguousarray(data, dtype=np.float64)
        out.requires_grad = any(p.requires_grad for p in parents)
        out.grad = None
        out.node_id = next(_node_ids)
        out.op = op
        out.name = None
        if out.requires_grad:
            out.parents = tuple(parents)
            out._backward = backward
        else:
            out.parents = ()
            out._backward = None
        return out

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else float("nan")

    def zero_grad(self) -> None:
        if self.requires_grad:
            self.grad = np.zeros_like(self.data)

    def detach(self) -> "Tensor":
        return Tensor(self.data.copy())

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, op={self.op}, requires_grad={self.requires_grad})"

    def backward(self) -> None:
        backward(self)

    def __add__(self, other):
        return add(self, as_tensor(other))

    def __radd__(self, other):
        return add(as_tensor(other), self)

    def __sub__(self, other):
        return sub(self, as_tensor(other))

    def __rsub__(self, other):
        return sub(as_tensor(other), self)

    def __mul__(self, other):
        if isinstance(other, (int, float)):
            return mul_scalar(self, float(other))
        return NotImplemented

    __rmul__ = __mul__

    def __neg__(self):
        return mul_scalar(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, index):
        return getitem(self, index)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _reachable(root: Tensor) -> list[Tensor]:
    seen: set[int] = set()
    out: list[Tensor] = []
    stack = [root]
    while stack:
        t = stack.pop()
        if t.node_id in seen or not t.requires_grad:
            continue
        seen.add(t.node_id)
        out.append(t)
        stack.extend(t.parents)
    return out


def backward(loss: Tensor) -> None:
    """Accumulate d(loss)/d(leaf) into every reachable leaf that requires grad.

    Intermediate gradients are reset on each call; leaf gradients accumulate
    until ``zero_grad``.
    """
    if loss.data.size != 1:
        raise NotScalar(f"backward needs a scalar loss, got shape {loss.shape}")
    if not loss.requires_grad:
        return
    nodes = _reachable(loss)
    for n in nodes:
        if n.parents:
            n.grad = np.zeros_like(n.data)
    loss.grad = loss.grad + np.ones_like(loss.data)
    for n in sorted(nodes, key=lambda t: t.node_id, reverse=True):
        if n._backward is None:
            continue
        grads = n._backward(n.grad)
        for p, g in zip(n.parents, grads):
            if g is None or not p.requires_grad:
                continue
            if p.grad is None:
                p.grad = np.zeros_like(p.data)
            p.grad += g


def zero_grad(tensors) -> None:
    for t in tensors:
        t.zero_grad()


# ----------------------------------------------------------------------------
# broadcasting helpers

def _leading_broadcast(big: tuple, small: tuple) -> bool:
    """True if ``small`` (minus leading 1s) is a trailing suffix of ``big``."""
    s = list(small)
    while s and s[0] == 1 and len(s) > 0:
        s.pop(0)
    if len(s) > len(big):
        return False
    return tuple(s) == tuple(big[len(big) - len(s):])


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    if g.shape == shape:
        return g
    n = int(np.prod(shape)) if shape else 1
    return g.reshape(-1, n).sum(axis=0).reshape(shape)


def _binary_shape(a: Tensor, b: Tensor, op: str) -> tuple:
    if a.shape == b.shape:
        return a.shape
    if len(a.shape) >= len(b.shape) and _leading_broadcast(a.shape, b.shape):
        return a.shape
    if len(b.shape) >= len(a.shape) and _leading_broadcast(b.shape, a.shape):
        return b.shape
    raise ShapeMismatch(f"{op}: cannot combine {a.shape} and {b.shape}")


# ----------------------------------------------------------------------------
# elementwise

def add(a: Tensor, b: Tensor) -> Tensor:
    shape = _binary_shape(a, b, "add")
    sa, sb = a.shape, b.shape
    return Tensor.from_op(
        np.broadcast_to(a.data + b.data, shape), (a, b), "add",
        lambda g: (_unbroadcast(g, sa), _unbroadcast(g, sb)))


def sub(a: Tensor, b: Tensor) -> Tensor:
    shape = _binary_shape(a, b, "sub")
    sa, sb = a.shape, b.shape
    return Tensor.from_op(
        np.broadcast_to(a.data - b.data, shape), (a, b), "sub",
        lambda g: (_unbroadcast(g, sa), -_unbroadcast(g, sb)))


def mul_scalar(x: Tensor, s: float) -> Tensor:
    s = float(s)
    return Tensor.from_op(x.data * s, (x,), "mul_scalar", lambda g: (g * s,))


def mul_const(x: Tensor, c: np.ndarray) -> Tensor:
    """Elementwise product with a constant (non-differentiable) array."""
    c = np.asarray(c, dtype=np.float64)
    if c.shape != x.shape:
        raise ShapeMismatch(f"mul_const: {x.shape} vs {c.shape}")
    return Tensor.from_op(x.data * c, (x,), "mul_const", lambda g: (g * c,))


def gelu(x: Tensor) -> Tensor:
    v = x.data
    t = np.tanh(GELU_C * (v + GELU_A * v ** 3))
    out = 0.5 * v * (1.0 + t)

    def bw(g):
        dt = (1.0 - t * t) * GELU_C * (1.0 + 3.0 * GELU_A * v * v)
        return (g * (0.5 * (1.0 + t) + 0.5 * v * dt),)

    return Tensor.from_op(out, (x,), "gelu", bw)


# ----------------------------------------------------------------------------
# linear algebra and layout

def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Matrix product over the last two axes.

    ``b`` is either a plain matrix shared across all leading axes of ``a``,
    or carries exactly the same leading axes as ``a``.
    """
    if a.ndim < 2 or b.ndim < 2:
        raise ShapeMismatch(f"matmul needs >=2-D operands, got {a.shape} and {b.shape}")
    if a.shape[-1] != b.shape[-2]:
        raise ShapeMismatch(f"matmul inner extents differ: {a.shape} @ {b.shape}")
    shared = b.ndim == 2
    if not shared and a.shape[:-2] != b.shape[:-2]:
        raise ShapeMismatch(f"matmul batch extents differ: {a.shape} @ {b.shape}")
    ad, bd = a.data, b.data

    def bw(g):
        ga = g @ np.swapaxes(bd, -1, -2)
        if shared:
            gb = ad.reshape(-1, ad.shape[-1]).T @ g.reshape(-1, g.shape[-1])
        else:
            gb = np.swapaxes(ad, -1, -2) @ g
        return ga, gb

    return Tensor.from_op(ad @ bd, (a, b), "matmul", bw)


def transpose2d(x: Tensor) -> Tensor:
    """Swap the last two axes (a plain transpose for matrices)."""
    if x.ndim < 2:
        raise ShapeMismatch(f"transpose2d needs >=2-D input, got {x.shape}")
    return Tensor.from_op(np.swapaxes(x.data, -1, -2), (x,), "transpose2d",
                          lambda g: (np.swapaxes(g, -1, -2),))


def permute(x: Tensor, axes: Sequence[int]) -> Tensor:
    axes = tuple(axes)
    inv = tuple(np.argsort(axes))
    return Tensor.from_op(np.transpose(x.data, axes), (x,), "permute",
                          lambda g: (np.transpose(g, inv),))


def reshape(x: Tensor, shape: Sequence[int]) -> Tensor:
    src = x.shape
    return Tensor.from_op(x.data.reshape(tuple(shape)), (x,), "reshape",
                          lambda g: (g.reshape(src),))


def concat(tensors: Sequence[Tensor], axis: int) -> Tensor:
    sizes = [t.shape[axis] for t in tensors]
    cuts = np.cumsum(sizes)[:-1]
    try:
        data = np.concatenate([t.data for t in tensors], axis=axis)
    except ValueError as exc:
        raise ShapeMismatch(f"concat: {exc}") from None
    return Tensor.from_op(data, tuple(tensors), "concat",
                          lambda g: tuple(np.split(g, cuts, axis=axis)))


def expand(x: Tensor, shape: Sequence[int]) -> Tensor:
    """Repeat ``x`` over new leading axes or any size-1 axis (numpy broadcasting)."""
    shape = tuple(shape)
    src = x.shape
    padded = (1,) * (len(shape) - len(src)) + src
    if len(shape) < len(src) or any(a != b and a != 1 for a, b in zip(padded, shape)):
        raise ShapeMismatch(f"expand: {x.shape} -> {shape}")
    axes = tuple(i for i, (a, b) in enumerate(zip(padded, shape)) if a == 1 and b != 1)

    def bw(g):
        return (g.sum(axis=axes, keepdims=True).reshape(src),)

    return Tensor.from_op(np.broadcast_to(x.data.reshape(padded), shape), (x,), "expand", bw)


def getitem(x: Tensor, index) -> Tensor:
    """Basic (view) indexing; integer, slice and Ellipsis only."""
    src = x.shape

    def bw(g):
        full = np.zeros(src)
        full[index] += g
        return (full,)

    return Tensor.from_op(np.array(x.data[index]), (x,), "getitem", bw)


# ----------------------------------------------------------------------------
# reductions

def sum_all(x: Tensor) -> Tensor:
    src = x.shape
    return Tensor.from_op(np.array(x.data.sum()), (x,), "sum",
                          lambda g: (np.broadcast_to(g, src).copy(),))


def mean(x: Tensor, axis: int, keepdims: bool = False) -> Tensor:
    n = x.shape[axis] if x.ndim else 0
    if n == 0:
        raise EmptyAxis(f"mean over empty axis {axis} of {x.shape}")
    src = x.shape

    def bw(g):
        if not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g / n, src).copy(),)

    return Tensor.from_op(x.data.mean(axis=axis, keepdims=keepdims), (x,), "mean", bw)


def mean_axis0(x: Tensor) -> Tensor:
    """Mean over the first axis, keeping it: (m, d) -> (1, d)."""
    return mean(x, 0, keepdims=True)


def l2_sq(x: Tensor) -> Tensor:
    """Sum of squared entries as a 0-d tensor."""
    v = x.data
    return Tensor.from_op(np.array((v * v).sum()), (x,), "l2_sq", lambda g: (2.0 * g * v,))


# ----------------------------------------------------------------------------
# normalisation and attention pieces

def softmax_rows(x: Tensor) -> Tensor:
    """Softmax over the last axis, stabilised by subtracting the row max."""
    if not np.all(np.isfinite(x.data)):
        raise NonFinite("softmax_rows received NaN/Inf input")
    z = x.data - x.data.max(axis=-1, keepdims=True)
    e = np.exp(z)
    s = e / e.sum(axis=-1, keepdims=True)

    def bw(g):
        return (s * (g - (g * s).sum(axis=-1, keepdims=True)),)

    return Tensor.from_op(s, (x,), "softmax", bw)


def layer_norm(x: Tensor, gamma: Tensor, beta: Tensor, eps: float = 1e-5) -> Tensor:
    d = x.shape[-1]
    if gamma.shape != (d,) or beta.shape != (d,):
        raise ShapeMismatch(f"layer_norm: affine shapes {gamma.shape}, {beta.shape} for width {d}")
    mu = x.data.mean(axis=-1, keepdims=True)
    xc = x.data - mu
    inv = 1.0 / np.sqrt((xc * xc).mean(axis=-1, keepdims=True) + eps)
    xhat = xc * inv
    gd = gamma.data

    def bw(g):
        dxhat = g * gd
        dx = inv * (dxhat - dxhat.mean(axis=-1, keepdims=True)
                    - xhat * (dxhat * xhat).mean(axis=-1, keepdims=True))
        flat = (-1, d)
        dgamma = (g * xhat).reshape(flat).sum(axis=0)
        dbeta = g.reshape(flat).sum(axis=0)
        return dx, dgamma, dbeta

    return Tensor.from_op(xhat * gd + beta.data, (x, gamma, beta), "layer_norm", bw)


def conv_pair(a: Tensor, b: Tensor, kernel: Tensor) -> Tensor:
    """1x2 convolution across a stacked pair: ``k[0]*a + k[1]*b``.

    The kernel is shared by every position and channel.
    """
    if a.shape != b.shape:
        raise ShapeMismatch(f"conv_pair: {a.shape} vs {b.shape}")
    if kernel.shape != (2,):
        raise ShapeMismatch(f"conv_pair kernel must have shape (2,), got {kernel.shape}")
    k0, k1 = kernel.data
    ad, bd = a.data, b.data

    def bw(g):
        return g * k0, g * k1, np.array([(g * ad).sum(), (g * bd).sum()])

    return Tensor.from_op(k0 * ad + k1 * bd, (a, b, kernel), "conv_pair", bw)


# ----------------------------------------------------------------------------
# finite-difference checking

@dataclass
class GradCheckReport:
    max_rel_err: float
    passed: bool
    per_tensor: dict[str, float] = field(default_factory=dict)
    skipped: bool = False
    reason: str = ""


def rel_err(analytic: np.ndarray, numeric: np.ndarray, floor: float = 1e-5) -> float:
    """Max elementwise |a - n| / max(|a|, |n|, floor)."""
    if analytic.size == 0:
        return 0.0
    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), floor)
    return float(np.max(np.abs(analytic - numeric) / denom))


def _probe(out: np.ndarray, seed: int) -> np.ndarray:
    return np.random.default_rng(seed).standard_normal(out.shape)


def grad_check(f: Callable[[Tensor], Tensor], x: Tensor | np.ndarray, h: float = 1e-6,
               tol: float = 1e-4, seed: int = 0) -> GradCheckReport:
    """Compare the analytic gradient of ``f`` at ``x`` with central differences.

    Non-scalar outputs are reduced to a scalar by a fixed random weighting so
    every output entry contributes.
    """
    x0 = np.array(x.data if isinstance(x, Tensor) else x, dtype=np.float64)
    leaf = Tensor(x0.copy(), requires_grad=True)
    out = f(leaf)
    weights = None if out.data.size == 1 else _probe(out.data, seed)
    loss = out if weights is None else sum_all(mul_const(out, weights))
    backward(loss)

    def scalar(v: np.ndarray) -> float:
        o = f(Tensor(v)).data
        return float(o.sum() if weights is None else (o * weights).sum())

    numeric = np.zeros_like(x0)
    flat = x0.reshape(-1)
    nflat = numeric.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        fp = scalar(x0)
        flat[i] = orig - h
        fm = scalar(x0)
        flat[i] = orig
        nflat[i] = (fp - fm) / (2 * h)
    err = rel_err(leaf.grad, numeric)
    return GradCheckReport(err, err <= tol, {"x": err})


def grad_check_params(loss_fn: Callable[[], Tensor], params: dict[str, Tensor], h: float = 1e-6,
                      tol: float = 1e-4) -> GradCheckReport:
    """Central-difference check of every tensor in ``params`` for a scalar loss.

    ``loss_fn`` must rebuild the graph from the current ``params`` each call.
    """
    for t in params.values():
        t.zero_grad()
    backward(loss_fn())
    analytic = {k: t.grad.copy() for k, t in params.items() if t.requires_grad}
    per = {}
    for name, g in analytic.items():
        t = params[name]
        flat = t.data.reshape(-1)
        numeric = np.zeros(flat.size)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            fp = loss_fn().item()
            flat[i] = orig - h
            fm = loss_fn().item()
            flat[i] = orig
            numeric[i] = (fp - fm) / (2 * h)
        per[name] = rel_err(g.reshape(-1), numeric)
    worst = max(per.values()) if per else 0.0
    return GradCheckReport(worst, worst <= tol, per)
