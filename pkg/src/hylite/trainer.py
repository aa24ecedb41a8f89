"""Adam with coupled weight decay, step learning-rate decay and the epoch loop."""
from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .checkpoint import save_checkpoint
from .data import HsiCube, PatchSource, SplitList, make_batches
from .errors import EmptySplit, NonFinite
from .losses import objective, reg_loss
from .metrics import EvalReport, confusion_matrix, report_from_confusion
from .model import ModelConfig, ModelParams, forward, init_params
from .tensor import backward

log = logging.getLogger(__name__)

LOG_COLUMNS = ("epoch", "lr", "loss", "ce", "reg", "oa", "aa", "kappa")


@dataclass
class TrainConfig:
    epochs: int = 300
    batch_size: int = 32
    lr: float = 5e-4
    weight_decay: float = 5e-3
    decoupled_wd: bool = False
    gamma: float = 0.9
    step_size: int = 30
    lam: float = 1.0
    reg_mode: str = "centroid"
    seed: int = 0
    eval_every: int = 0  # 0 = evaluate only after the last epoch
    eval_batch: int = 256


@dataclass
class Dataset:
    cube: HsiCube
    train: SplitList
    test: SplitList

    @property
    def n_classes(self) -> int:
        return self.cube.n_classes


@dataclass
class AdamState:
    lr: float
    weight_decay: float = 0.0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    decoupled: bool = False
    t: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)


def adam_step(params: dict, state: AdamState) -> None:
    """One Adam update of every tensor in ``params`` (name -> Tensor) from its .grad.

    Weight decay is the classic coupled L2 term (added to the gradient) unless
    ``state.decoupled`` is set.
    """
    state.t += 1
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1 ** state.t
    c2 = 1.0 - b2 ** state.t
    for name, p in params.items():
        g = p.grad
        if not np.all(np.isfinite(g)):
            raise NonFinite(f"non-finite gradient in {name}")
        if state.weight_decay and not state.decoupled:
            g = g + state.weight_decay * p.data
        m = state.m.get(name)
        if m is None:
            m = state.m[name] = np.zeros_like(p.data)
            state.v[name] = np.zeros_like(p.data)
        v = state.v[name]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        if state.lr == 0.0:
            continue
        update = state.lr * (m / c1) / (np.sqrt(v / c2) + state.eps)
        if state.weight_decay and state.decoupled:
            update = update + state.lr * state.weight_decay * p.data
        p.data -= update
        if not np.all(np.isfinite(p.data)):
            raise NonFinite(f"parameter {name} became non-finite")


def step_lr(epoch: int, base_lr: float, gamma: float = 0.9, step_size: int = 30) -> float:
    """Learning rate for 0-based ``epoch``: base_lr * gamma ** (epoch // step_size)."""
    return base_lr * gamma ** (epoch // step_size)


@dataclass
class TrainLog:
    rows: list = field(default_factory=list)
    final_report: EvalReport | None = None

    def append(self, **row) -> None:
        self.rows.append({k: row.get(k, float("nan")) for k in LOG_COLUMNS})

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(LOG_COLUMNS)
            for r in self.rows:
                w.writerow([r["epoch"]] + [_fmt(r[k]) for k in LOG_COLUMNS[1:]])

    def column(self, name: str) -> list:
        return [r[name] for r in self.rows]


def _fmt(x) -> str:
    return "" if x is None or (isinstance(x, float) and math.isnan(x)) else repr(float(x))


def evaluate_model(params: ModelParams, cfg: ModelConfig, cube: HsiCube | PatchSource, split: SplitList,
                   batch_size: int = 256) -> EvalReport:
    """Argmax predictions over ``split`` (ties to the lowest class id)."""
    src = cube if isinstance(cube, PatchSource) and cube.p == cfg.p else PatchSource(
        cube.cube if isinstance(cube, PatchSource) else cube, cfg.p)
    cm = np.zeros((cfg.c, cfg.c), dtype=np.int64)
    for batch in make_batches(src, split, cfg.p, batch_size, shuffle=False):
        logits, _ = forward(batch, params, cfg)
        pred = np.argmax(logits.data, axis=1) + 1
        cm += confusion_matrix(pred, batch.targets, cfg.c)
    return report_from_confusion(cm)


def mean_reg(params: ModelParams, cfg: ModelConfig, cube, split: SplitList, mode: str = "centroid",
             batch_size: int = 256) -> float:
    """Sample-mean regulariser value of the current model over ``split``."""
    total, n = 0.0, 0
    for batch in make_batches(cube, split, cfg.p, batch_size, shuffle=False):
        _, xb = forward(batch, params, cfg)
        total += reg_loss(xb, mode).item() * len(batch.targets)
        n += len(batch.targets)
    return total / n


def train(cfg: ModelConfig, data: Dataset, tcfg: TrainConfig, params: ModelParams | None = None,
          out_dir=None) -> tuple[ModelParams, TrainLog]:
    """Train from ``init_params(cfg, tcfg.seed)`` (or ``params``) for ``tcfg.epochs`` epochs.

    When ``out_dir`` is given, ``train_log.csv``, ``last.hyck`` and
    ``best.hyck`` (highest test OA among evaluated epochs) are written there.
    """
    if len(data.train) == 0:
        raise EmptySplit("training split is empty")
    params = params if params is not None else init_params(cfg, tcfg.seed)
    learnable = params.learnable()
    state = AdamState(tcfg.lr, tcfg.weight_decay, decoupled=tcfg.decoupled_wd)
    src = PatchSource(data.cube, cfg.p)
    log_ = TrainLog()
    out = Path(out_dir) if out_dir is not None else None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
    best_oa = -1.0
    for epoch in range(1, tcfg.epochs + 1):
        state.lr = step_lr(epoch - 1, tcfg.lr, tcfg.gamma, tcfg.step_size)
        sums = np.zeros(3)
        seen = 0
        batches = make_batches(src, data.train, cfg.p, tcfg.batch_size,
                               seed=tcfg.seed * 100003 + epoch, shuffle=True)
        for bi, batch in enumerate(batches):
            params.zero_grad()
            logits, xb = forward(batch, params, cfg)
            total, ce, reg = objective(logits, batch.targets - 1, xb, tcfg.lam, tcfg.reg_mode)
            if not np.isfinite(total.item()):
                raise NonFinite(f"loss is non-finite at epoch {epoch}, batch {bi}")
            backward(total)
            try:
                adam_step(learnable, state)
            except NonFinite as exc:
                raise NonFinite(f"{exc} at epoch {epoch}, batch {bi}") from None
            k = len(batch.targets)
            reg_value = reg.item() if reg is not None else reg_loss(xb, tcfg.reg_mode).item()
            sums += k * np.array([total.item(), ce.item(), reg_value])
            seen += k
        means = sums / seen
        row = dict(epoch=epoch, lr=state.lr, loss=means[0], ce=means[1], reg=means[2])
        last = epoch == tcfg.epochs
        if len(data.test) and (last or (tcfg.eval_every and epoch % tcfg.eval_every == 0)):
            rep = evaluate_model(params, cfg, src, data.test, tcfg.eval_batch)
            row.update(oa=rep.oa, aa=rep.aa, kappa=rep.kappa)
            if last:
                log_.final_report = rep
            if out is not None and rep.oa > best_oa:
                best_oa = rep.oa
                save_checkpoint(out / "best.hyck", params)
        log_.append(**row)
        log.info("epoch %d lr %.3g loss %.4f ce %.4f", epoch, state.lr, means[0], means[1])
    if out is not None:
        log_.write_csv(out / "train_log.csv")
        save_checkpoint(out / "last.hyck", params)
    return params, log_
