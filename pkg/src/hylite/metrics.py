"""Confusion-matrix metrics: overall accuracy, average accuracy, Cohen's kappa."""
from __future__ import annotations

import csv
import warnings
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import LengthMismatch


@dataclass
class EvalReport:
    confusion: np.ndarray  # (c, c), row = true, col = predicted
    oa: float
    aa: float
    kappa: float
    per_class: np.ndarray  # recall per class, NaN where the class is absent
    excluded: tuple[int, ...] = ()  # class ids left out of AA

    @property
    def support(self) -> np.ndarray:
        return self.confusion.sum(axis=1)

    def merge(self, other: "EvalReport") -> "EvalReport":
        return report_from_confusion(self.confusion + other.confusion)

    def write_csv(self, out_dir, class_names: list[str] | None = None) -> None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        with open(out / "metrics.csv", "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["oa", "aa", "kappa"])
            w.writerow([repr(self.oa), repr(self.aa), repr(self.kappa)])
        with open(out / "per_class.csv", "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["class", "n", "recall"])
            for k, (n, r) in enumerate(zip(self.support, self.per_class), start=1):
                name = class_names[k - 1] if class_names else str(k)
                w.writerow([name, int(n), "" if np.isnan(r) else repr(float(r))])
        with open(out / "confusion.csv", "w", newline="") as fh:
            csv.writer(fh).writerows(self.confusion.astype(int).tolist())


def confusion_matrix(predictions, truths, c: int) -> np.ndarray:
    """Counts with class ids 1..c."""
    pred = np.asarray(predictions, dtype=np.int64).reshape(-1)
    true = np.asarray(truths, dtype=np.int64).reshape(-1)
    if len(pred) != len(true):
        raise LengthMismatch(f"{len(pred)} predictions vs {len(true)} truths")
    for name, v in (("predictions", pred), ("truths", true)):
        if len(v) and (v.min() < 1 or v.max() > c):
            raise ValueError(f"{name} must be class ids in 1..{c}")
    cm = np.zeros((c, c), dtype=np.int64)
    np.add.at(cm, (true - 1, pred - 1), 1)
    return cm


def report_from_confusion(cm: np.ndarray) -> EvalReport:
    cm = np.asarray(cm, dtype=np.int64)
    n = cm.sum()
    rows = cm.sum(axis=1)
    cols = cm.sum(axis=0)
    diag = np.diag(cm)
    present = rows > 0
    per_class = np.full(len(cm), np.nan)
    per_class[present] = diag[present] / rows[present]
    excluded = tuple(int(k) + 1 for k in np.flatnonzero(~present))
    if excluded:
        warnings.warn(f"classes {excluded} absent from the truths; excluded from AA", stacklevel=2)
    if n == 0:
        return EvalReport(cm, float("nan"), float("nan"), float("nan"), per_class, excluded)
    oa = diag.sum() / n
    aa = float(per_class[present].mean())
    pe = float((rows * cols).sum()) / float(n) ** 2
    kappa = 1.0 if pe == 1.0 else (oa - pe) / (1.0 - pe)
    return EvalReport(cm, float(oa), aa, float(kappa), per_class, excluded)


def evaluate(predictions, truths, c: int) -> EvalReport:
    return report_from_confusion(confusion_matrix(predictions, truths, c))
