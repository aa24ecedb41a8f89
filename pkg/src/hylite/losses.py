"""Training objective: cross-entropy plus the class-token/centroid regulariser."""
from __future__ import annotations

import numpy as np

from . import tensor as T
from .errors import NegativeLambda, ShapeMismatch, TargetOutOfRange
from .tensor import Tensor

REG_MODES = ("centroid", "per_token")


def cross_entropy(logits: Tensor, targets) -> Tensor:
    """Batch-mean of -log softmax(logits)[target]; targets are 0-based columns."""
    z = logits.data
    if z.ndim == 1:
        z = z[None]
    targets = np.asarray(targets, dtype=np.int64).reshape(-1)
    b, c = z.shape
    if len(targets) != b:
        raise ShapeMismatch(f"{len(targets)} targets for {b} logit rows")
    if np.any(targets < 0) or np.any(targets >= c):
        raise TargetOutOfRange(f"targets must lie in [0, {c}), got {targets.min()}..{targets.max()}")
    zmax = z.max(axis=1, keepdims=True)
    lse = zmax[:, 0] + np.log(np.exp(z - zmax).sum(axis=1))
    rows = np.arange(b)
    loss = float(np.mean(lse - z[rows, targets]))
    shape = logits.shape

    def bw(g):
        probs = np.exp(z - lse[:, None])
        probs[rows, targets] -= 1.0
        return ((g / b) * probs).reshape(shape),

    return Tensor.from_op(np.array(loss), (logits,), "cross_entropy", bw)


def reg_loss(xb: Tensor, mode: str = "centroid") -> Tensor:
    """Distance between the class-token row and the other token rows, batch-averaged.

    ``centroid``: ||x0 - mean_i x_i||^2. ``per_token``: mean_i ||x0 - x_i||^2.
    Accepts a single (n, w) token matrix or a (B, n, w) batch.
    """
    if mode not in REG_MODES:
        raise ValueError(f"unknown reg mode {mode!r}")
    if xb.ndim == 2:
        xb = T.reshape(xb, (1, *xb.shape))
    b, n, w = xb.shape
    if n < 2:
        raise ShapeMismatch("need at least one token besides the class token")
    cls = xb[:, 0:1, :]
    rest = xb[:, 1:, :]
    if mode == "centroid":
        diff = cls - T.mean(rest, axis=1, keepdims=True)
        return T.mul_scalar(T.l2_sq(diff), 1.0 / b)
    diff = rest - T.expand(cls, rest.shape)
    return T.mul_scalar(T.l2_sq(diff), 1.0 / (b * (n - 1)))


def objective(logits: Tensor, targets, xb: Tensor, lam: float = 1.0,
              mode: str = "centroid") -> tuple[Tensor, Tensor, Tensor | None]:
    """Return (total, ce, reg). With ``lam == 0`` the total *is* the CE node."""
    if lam < 0:
        raise NegativeLambda(f"lambda must be >= 0, got {lam}")
    ce = cross_entropy(logits, targets)
    if lam == 0:
        return ce, ce, None
    reg = reg_loss(xb, mode)
    return ce + T.mul_scalar(reg, lam), ce, reg
