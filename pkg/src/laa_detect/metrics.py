"""Confusion matrices, accuracy and the per-model comparison report.

Attacked days are the positive class. Rates in the report are fractions of
all evaluated cases, so ``fp_rate`` is the share of days wrongly flagged.
"""
from __future__ import annotations

import csv
import io
from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np

from .errors import InputError

REPORT_COLUMNS = ["model", "tp", "fp", "fn", "tn", "cases", "accuracy", "fp_rate", "fn_rate"]


@dataclass(frozen=True)
class ConfusionMatrix:
    tp: int
    fp: int
    fn: int
    tn: int

    def __post_init__(self):
        if min(self.tp, self.fp, self.fn, self.tn) < 0:
            raise InputError("confusion counts must be non-negative")

    @property
    def total(self) -> int:
        return self.tp + self.fp + self.fn + self.tn


def _binary(values, name: str) -> np.ndarray:
    arr = np.asarray(values)
    if arr.ndim != 1:
        raise InputError(f"{name} must be one-dimensional")
    if not np.all((arr == 0) | (arr == 1)):
        raise InputError(f"{name} must contain only 0 and 1")
    return arr.astype(bool)


def confusion(preds: Sequence[int], labels: Sequence[int]) -> ConfusionMatrix:
    p = _binary(preds, "preds")
    y = _binary(labels, "labels")
    if len(p) != len(y):
        raise InputError(f"{len(p)} predictions for {len(y)} labels")
    if len(p) == 0:
        raise InputError("nothing to evaluate")
    return ConfusionMatrix(
        tp=int(np.sum(p & y)),
        fp=int(np.sum(p & ~y)),
        fn=int(np.sum(~p & y)),
        tn=int(np.sum(~p & ~y)),
    )


def accuracy(m: ConfusionMatrix) -> float:
    if m.total == 0:
        raise InputError("accuracy of an empty confusion matrix")
    return (m.tp + m.tn) / m.total


def report_rows(matrices: Mapping[str, ConfusionMatrix]) -> list[dict]:
    rows = []
    for name, m in matrices.items():
        acc = accuracy(m)
        rows.append({
            "model": name, "tp": m.tp, "fp": m.fp, "fn": m.fn, "tn": m.tn, "cases": m.total,
            "accuracy": acc, "fp_rate": m.fp / m.total, "fn_rate": m.fn / m.total,
        })
    return rows


def report_csv(matrices: Mapping[str, ConfusionMatrix]) -> str:
    out = io.StringIO()
    writer = csv.DictWriter(out, fieldnames=REPORT_COLUMNS, lineterminator="\n")
    writer.writeheader()
    for row in report_rows(matrices):
        writer.writerow({k: (f"{v:.6f}" if isinstance(v, float) else v) for k, v in row.items()})
    return out.getvalue()


def report(matrices: Mapping[str, ConfusionMatrix]) -> str:
    """Fixed-width text table, one row per model in insertion order."""
    header = f"{'model':<8}{'tp':>6}{'fp':>6}{'fn':>6}{'tn':>6}{'cases':>7}{'accuracy':>10}{'fp_rate':>9}{'fn_rate':>9}"
    lines = [header]
    for r in report_rows(matrices):
        lines.append(f"{r['model']:<8}{r['tp']:>6}{r['fp']:>6}{r['fn']:>6}{r['tn']:>6}{r['cases']:>7}"
                     f"{r['accuracy']:>10.4f}{r['fp_rate']:>9.4f}{r['fn_rate']:>9.4f}")
    return "\n".join(lines) + "\n"
