"""Selection decisions from posterior summaries and their operating
characteristics against a known truth."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import InvalidArgumentError

__all__ = [
    "SelectionReport",
    "OperatingCharacteristics",
    "decide",
    "confusion_metrics",
    "average_mse",
]


@dataclass
class SelectionReport:
    """Per-coefficient decisions.

    ``spatially_varying[k]`` is None whenever coefficient k is not selected.
    """

    selected: np.ndarray
    spatially_varying: list
    lambda_mean: np.ndarray
    c_mean: np.ndarray
    names: tuple = ()

    def records(self) -> list[dict]:
        names = self.names or tuple(f"x{k + 1}" for k in range(len(self.selected)))
        return [
            {"name": names[k], "lambda_mean": float(self.lambda_mean[k]),
             "selected": bool(self.selected[k]), "c_mean": float(self.c_mean[k]),
             "spatially_varying": self.spatially_varying[k]}
            for k in range(len(self.selected))
        ]


@dataclass
class OperatingCharacteristics:
    """TPR/TNR/PPV/NPV; ratios with a zero denominator are NaN."""

    tp: int
    fn: int
    tn: int
    fp: int
    tpr: float
    tnr: float
    ppv: float
    npv: float

    def as_dict(self) -> dict:
        return {"tp": self.tp, "fn": self.fn, "tn": self.tn, "fp": self.fp,
                "tpr": self.tpr, "tnr": self.tnr, "ppv": self.ppv, "npv": self.npv}


def decide(summary, lambda_threshold: float = 1.0, c_threshold: float = 0.5,
           names=()) -> SelectionReport:
    """Threshold the posterior means.

    A coefficient is dropped when its mean local scale is below
    ``lambda_threshold``.  A kept coefficient is spatially varying only when
    the posterior probability of a non-zero decay strictly exceeds
    ``c_threshold``; a tie counts as static.
    """
    lam = np.asarray(summary.lambda_mean, dtype=float)
    cm = np.asarray(summary.c_mean, dtype=float)
    selected = lam >= lambda_threshold
    varying = [bool(cm[k] > c_threshold) if selected[k] else None for k in range(lam.size)]
    return SelectionReport(selected=selected, spatially_varying=varying,
                           lambda_mean=lam, c_mean=cm, names=tuple(names))


def _ratio(num, den):
    return num / den if den else math.nan


def confusion_metrics(decisions, truth) -> OperatingCharacteristics:
    """Counts and rates of binary ``decisions`` against binary ``truth``."""
    d = np.asarray(decisions, dtype=bool)
    t = np.asarray(truth, dtype=bool)
    if d.shape != t.shape:
        raise InvalidArgumentError(f"length mismatch: {d.shape} vs {t.shape}")
    tp = int(np.sum(d & t))
    fn = int(np.sum(~d & t))
    tn = int(np.sum(~d & ~t))
    fp = int(np.sum(d & ~t))
    return OperatingCharacteristics(tp, fn, tn, fp, _ratio(tp, tp + fn), _ratio(tn, tn + fp),
                                    _ratio(tp, tp + fp), _ratio(tn, tn + fn))


def average_mse(beta_mean, truth) -> np.ndarray:
    """Per-coefficient squared error averaged over sites."""
    est = np.asarray(beta_mean, dtype=float)
    tru = np.asarray(truth, dtype=float)
    if est.shape != tru.shape or est.ndim != 2:
        raise InvalidArgumentError(f"dimension mismatch: {est.shape} vs {tru.shape}")
    return np.mean((est - tru) ** 2, axis=0)
