"""Detection metrics under the audit protocol (every anomaly must be caught).

Anomalies (global or local) are the positive class. Rankings break ties by
ascending ingestion order.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, asdict, field
from typing import Sequence

import numpy as np

from .data import Label
from .errors import DataError


def _positives(labels) -> np.ndarray:
    labels = list(labels)
    if labels and isinstance(labels[0], Label):
        return np.array([lab.is_anomaly for lab in labels], dtype=bool)
    return np.asarray(labels, dtype=bool)


def _aligned(scores, labels) -> tuple[np.ndarray, np.ndarray]:
    s = np.asarray(scores, dtype=np.float64)
    y = _positives(labels)
    if s.shape != y.shape or s.ndim != 1:
        raise DataError(f"{s.size} scores vs {y.size} labels")
    return s, y


@dataclass(frozen=True)
class Confusion:
    tp: int
    fp: int
    fn: int
    tn: int

    @property
    def precision(self) -> float:
        return self.tp / (self.tp + self.fp) if self.tp + self.fp else 0.0

    @property
    def recall(self) -> float:
        return self.tp / (self.tp + self.fn) if self.tp + self.fn else 0.0

    @property
    def f1(self) -> float:
        p, r = self.precision, self.recall
        return 2 * p * r / (p + r) if p + r > 0 else 0.0


def confusion_at(scores, labels, threshold: float) -> Confusion:
    """Confusion counts with ``score >= threshold`` predicted anomalous."""
    s, y = _aligned(scores, labels)
    pred = s >= threshold
    return Confusion(int((pred & y).sum()), int((pred & ~y).sum()),
                     int((~pred & y).sum()), int((~pred & ~y).sum()))


def ranking(scores) -> np.ndarray:
    """Indices by descending score; equal scores keep ingestion order."""
    return np.argsort(-np.asarray(scores, dtype=np.float64), kind="stable")


def top_k_precision(scores, labels, k: int) -> float:
    s, y = _aligned(scores, labels)
    if k <= 0:
        raise DataError(f"k must be positive, got {k}")
    if k > s.size:
        raise DataError(f"k={k} exceeds population size {s.size}")
    return float(y[ranking(s)[:k]].sum()) / k


def roc_auc(scores, labels) -> float:
    """Mann-Whitney AUC, ties counted one half, via one sorted sweep."""
    s, y = _aligned(scores, labels)
    n_pos = int(y.sum())
    n_neg = y.size - n_pos
    if n_pos == 0 or n_neg == 0:
        raise DataError("ROC-AUC is undefined with a single class present")
    order = np.argsort(s, kind="stable")
    s_sorted, y_sorted = s[order], y[order]
    # group equal scores; each positive beats all negatives strictly below its group
    bounds = np.flatnonzero(np.diff(s_sorted)) + 1
    starts = np.concatenate(([0], bounds))
    ends = np.concatenate((bounds, [s.size]))
    wins2 = 0  # twice the win count, keeps the sum integral
    neg_below = 0
    for a, b in zip(starts, ends):
        pos = int(y_sorted[a:b].sum())
        neg = (b - a) - pos
        wins2 += pos * (2 * neg_below + neg)
        neg_below += neg
    return wins2 / (2 * n_pos * n_neg)


@dataclass
class EvaluationReport:
    precision: float
    recall: float
    f1: float
    top_k_precision: float
    k: int
    roc_auc: float
    flagged_count: int
    flagged_fraction: float
    threshold: float | None
    class_recall: dict = field(default_factory=dict)

    def to_json(self) -> dict:
        return asdict(self)


def _class_recall(flags: np.ndarray, labels) -> dict:
    out = {}
    labels = list(labels)
    if labels and isinstance(labels[0], Label):
        for cls in (Label.GLOBAL, Label.LOCAL):
            idx = [i for i, lab in enumerate(labels) if lab is cls]
            out[cls.value] = float(flags[idx].mean()) if idx else None
    return out


def report_at(scores, labels, threshold: float | None, k: int | None = None,
              flags: np.ndarray | None = None) -> EvaluationReport:
    """Evaluation at a threshold, or at an explicit boolean ``flags`` vector."""
    s, y = _aligned(scores, labels)
    if flags is None:
        flags = s >= threshold
    flags = np.asarray(flags, dtype=bool)
    conf = Confusion(int((flags & y).sum()), int((flags & ~y).sum()),
                     int((~flags & y).sum()), int((~flags & ~y).sum()))
    if k is None:
        k = int(y.sum())
    return EvaluationReport(
        precision=conf.precision, recall=conf.recall, f1=conf.f1,
        top_k_precision=top_k_precision(s, y, k), k=k, roc_auc=roc_auc(s, y),
        flagged_count=int(flags.sum()), flagged_fraction=float(flags.mean()),
        threshold=None if threshold is None else float(threshold), class_recall=_class_recall(flags, labels))


def recall100_operating_point(scores, labels, k: int | None = None) -> tuple[float, EvaluationReport]:
    """Highest threshold that still flags every true anomaly."""
    s, y = _aligned(scores, labels)
    if not y.any() or y.all():
        raise DataError("recall-100% operating point needs both classes")
    threshold = float(s[y].min())
    return threshold, report_at(s, labels, threshold, k)


TABLE_COLUMNS = ("Model", "Precision", "F1-Score", "Top-k", "ROC-AUC", "Anomalies [%]", "Anomalies [#]")


def format_table(rows: Sequence[tuple[str, EvaluationReport]]) -> str:
    """Fixed-width summary in the column layout of the detection tables."""
    head = f"{TABLE_COLUMNS[0]:<22}" + "".join(f"{c:>15}" for c in TABLE_COLUMNS[1:])
    lines = [head, "-" * len(head)]
    for name, r in rows:
        lines.append(f"{name:<22}{r.precision:>15.4f}{r.f1:>15.4f}{r.top_k_precision:>15.4f}"
                     f"{r.roc_auc:>15.4f}{100 * r.flagged_fraction:>15.2f}{r.flagged_count:>15d}")
    return "\n".join(lines)


def dump_reports(path, reports: dict) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump({k: v.to_json() for k, v in reports.items()}, fh, indent=1, sort_keys=True)
        fh.write("\n")
