"""Confusion counts and per-class precision / recall / F1."""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass

import numpy as np


def _ratio(num: int, den: int) -> float:
    return num / den if den else 0.0


def _f1(p: float, r: float) -> float:
    return 2 * p * r / (p + r) if p + r else 0.0


@dataclass(frozen=True)
class ClassScores:
    precision: float
    recall: float
    f1: float


@dataclass(frozen=True)
class MetricsReport:
    """Counts use label 1 ("positive") as the positive class.

    Per-class scores treat each class in turn as the positive class of its own
    binary confusion matrix; undefined ratios are reported as 0.
    """

    tp: int
    fp: int
    tn: int
    fn: int

    @classmethod
    def from_labels(cls, y_true, y_pred) -> "MetricsReport":
        y_true = np.asarray(y_true, dtype=np.int64)
        y_pred = np.asarray(y_pred, dtype=np.int64)
        if y_true.shape != y_pred.shape:
            raise ValueError(f"label/prediction shapes differ: {y_true.shape} vs {y_pred.shape}")
        return cls(
            tp=int(np.sum((y_pred == 1) & (y_true == 1))),
            fp=int(np.sum((y_pred == 1) & (y_true == 0))),
            tn=int(np.sum((y_pred == 0) & (y_true == 0))),
            fn=int(np.sum((y_pred == 0) & (y_true == 1))),
        )

    @property
    def total(self) -> int:
        return self.tp + self.fp + self.tn + self.fn

    @property
    def accuracy(self) -> float:
        return _ratio(self.tp + self.tn, self.total)

    @property
    def positive(self) -> ClassScores:
        p, r = _ratio(self.tp, self.tp + self.fp), _ratio(self.tp, self.tp + self.fn)
        return ClassScores(p, r, _f1(p, r))

    @property
    def negative(self) -> ClassScores:
        p, r = _ratio(self.tn, self.tn + self.fn), _ratio(self.tn, self.tn + self.fp)
        return ClassScores(p, r, _f1(p, r))

    def rows(self, model: str) -> list[list[str]]:
        acc = f"{self.accuracy:.6f}"
        return [
            [model, name, f"{s.precision:.6f}", f"{s.recall:.6f}", f"{s.f1:.6f}", acc]
            for name, s in (("positive", self.positive), ("negative", self.negative))
        ]


METRICS_HEADER = ["model", "class", "precision", "recall", "f1", "accuracy"]


def metrics_csv(reports: dict[str, MetricsReport]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(METRICS_HEADER)
    for model, report in reports.items():
        writer.writerows(report.rows(model))
    return buf.getvalue()
