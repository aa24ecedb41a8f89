"""Finite-difference check suite over every differentiable op and the tiny model."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import losses as L
from . import model as M
from . import tensor as T
from .tensor import Tensor

TINY_CHECK = dict(m=3, p=1, d=4, blocks=2, heads=1, c=2)


def _const(a):
    return Tensor(a)


def op_cases(rng: np.random.Generator) -> dict:
    """name -> (function of one tensor, input shape). Constants are drawn up front."""
    n = rng.normal
    c32, x243, g4, b4, x34, k2 = n(size=(3, 2)), n(size=(2, 4, 3)), n(size=4), n(size=4), n(size=(3, 4)), n(size=2)
    a23, b23, r14, xb = n(size=(2, 3)), n(size=(2, 3)), n(size=(3, 4)), n(size=(2, 4, 3))
    return {
        "matmul": (lambda x: T.matmul(x, _const(c32)), (4, 3)),
        "matmul_batched": (lambda w: T.matmul(_const(x243), w), (3, 2)),
        "softmax_rows": (T.softmax_rows, (3, 4)),
        "layer_norm": (lambda x: T.layer_norm(x, _const(g4), _const(b4)), (3, 4)),
        "layer_norm_affine": (lambda g: T.layer_norm(_const(x34), g, _const(b4)), (4,)),
        "transpose2d": (T.transpose2d, (2, 3)),
        "add_broadcast": (lambda b: T.add(_const(r14), b), (1, 4)),
        "sub": (lambda a: T.sub(a, _const(r14)), (3, 4)),
        "mul_scalar": (lambda x: T.mul_scalar(x, -1.7), (5,)),
        "gelu": (T.gelu, (6,)),
        "mean": (lambda x: T.mean(x, axis=1), (2, 3, 4)),
        "mean_axis0": (T.mean_axis0, (4, 3)),
        "l2_sq": (T.l2_sq, (2, 3)),
        "conv_pair": (lambda a: T.conv_pair(a, _const(b23), _const(k2)), (2, 3)),
        "conv_pair_kernel": (lambda k: T.conv_pair(_const(a23), _const(b23), k), (2,)),
        "permute_reshape": (lambda x: T.reshape(T.permute(x, (1, 0, 2)), (3, 8)), (2, 3, 4)),
        "concat_getitem": (lambda x: T.concat([x[0:1], T.mul_scalar(x, 2.0)], axis=0), (2, 3)),
        "expand": (lambda x: T.expand(x, (3, 2, 4)), (1, 4)),
        "cross_entropy": (lambda z: L.cross_entropy(z, [1, 0, 2]), (3, 3)),
        "reg_loss": (lambda x: L.reg_loss(T.add(x, _const(xb))), (2, 4, 3)),
    }


@dataclass
class CheckRow:
    name: str
    max_rel_err: float
    passed: bool


def tiny_objective_check(seed: int = 0, blocks: int = 2, h: float = 1e-6, tol: float = 1e-4) -> CheckRow:
    """Whole tiny-model objective (lambda = 1, CAF on) against central differences."""
    cfg = M.ModelConfig(**{**TINY_CHECK, "blocks": blocks})
    rng = np.random.default_rng(seed)
    params = M.init_params(cfg, seed)
    for name, t in params.tensors.items():
        if t.requires_grad:
            t.data = rng.normal(0, 0.5, size=t.shape) + (1.0 if name.endswith("_g") else 0.0)
    x = rng.random((3, cfg.m, cfg.p * cfg.p))
    targets0 = np.array([0, 1, 1])

    def loss():
        logits, xb = M.forward(x, params, cfg)
        return L.objective(logits, targets0, xb, 1.0)[0]

    rep = T.grad_check_params(loss, params.learnable(), h=h, tol=tol)
    return CheckRow(f"tiny_model_B{blocks}", rep.max_rel_err, rep.passed)


def run_suite(seeds: int = 5, tol: float = 1e-4) -> list[CheckRow]:
    rows = []
    names = list(op_cases(np.random.default_rng(0)))
    for name in names:
        worst = 0.0
        for seed in range(seeds):
            rng = np.random.default_rng(seed)
            f, shape = op_cases(rng)[name]
            x = rng.normal(size=shape)
            rep = T.grad_check(f, x, h=1e-6, tol=tol, seed=seed)
            worst = max(worst, rep.max_rel_err)
        rows.append(CheckRow(name, worst, worst <= tol))
    # B=2 has no fusion site; B=3 adds one
    for blocks in (2, 3):
        rows.append(tiny_objective_check(0, blocks, tol=tol))
    return rows
