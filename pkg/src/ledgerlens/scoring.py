"""Combined anomaly score from attribute-value rarity and reconstruction error.

``AP`` is the min-max normalised sum of ``ln(1 + n_j / N)`` over an entry's
attribute values, ``RE`` the min-max normalised reconstruction error, and
``AS = alpha * RE + (1 - alpha) * AP``. Entries with ``AS >= beta`` are
flagged; flagged entries with ``AS >= tau`` are classed local, the rest global.
"""

from __future__ import annotations

import csv
import enum
import json
import math
from collections import Counter
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import ConfigError, DataError

DEFAULT_ALPHA = 0.3
DEFAULT_BETA = 0.01
DEFAULT_TAU = 0.4
SCORE_FIELDS = ("entry_id", "E", "RE", "AP", "AS", "flagged", "class")


class AnomalyClass(enum.Enum):
    NONE = "none"
    GLOBAL = "global"
    LOCAL = "local"


class FlagMode(enum.Enum):
    AS = "as"
    RE_ONLY = "re-only"


def _values(entries) -> list[tuple]:
    return [tuple(getattr(e, "values", e)) for e in entries]


@dataclass(frozen=True)
class AttributeStats:
    counts: tuple[Counter, ...]
    n: int

    def log_prob_sum(self, entries) -> np.ndarray:
        """``P(x) = sum_j ln(1 + n_j / N)`` for each entry."""
        rows = _values(entries)
        total = np.zeros(len(rows))
        for j, counter in enumerate(self.counts):
            # libm log1p, memoised per count; numpy's vectorised log1p can differ by an ulp
            terms: dict[int, float] = {}
            for i, r in enumerate(rows):
                c = counter[r[j]]
                t = terms.get(c)
                if t is None:
                    t = terms[c] = math.log1p(c / self.n)
                total[i] += t
        return total


def compute_attribute_stats(entries) -> AttributeStats:
    rows = _values(entries)
    if not rows:
        raise DataError("attribute statistics need a non-empty population")
    k = len(rows[0])
    if any(len(r) != k for r in rows):
        raise DataError("entries have differing attribute counts")
    counts = tuple(Counter(r[j] for r in rows) for j in range(k))
    return AttributeStats(counts, len(rows))


def minmax(values) -> np.ndarray:
    """Min-max normalise to [0, 1]; a constant vector maps to all zeros."""
    v = np.asarray(values, dtype=np.float64)
    lo, hi = v.min(), v.max()
    if hi == lo:
        return np.zeros_like(v)
    return (v - lo) / (hi - lo)


def ap_score(stats: AttributeStats, entries) -> np.ndarray:
    return minmax(stats.log_prob_sum(entries))


def re_score(errors) -> np.ndarray:
    return minmax(errors)


def anomaly_score(re, ap, alpha: float = DEFAULT_ALPHA) -> np.ndarray:
    if not 0.0 <= alpha <= 1.0:
        raise ConfigError(f"alpha must lie in [0, 1], got {alpha}")
    re = np.asarray(re, dtype=np.float64)
    ap = np.asarray(ap, dtype=np.float64)
    return alpha * re + (1 - alpha) * ap


def flag(scores, beta: float = DEFAULT_BETA) -> tuple[np.ndarray, np.ndarray]:
    """Return ``(flagged, thresholded)``: scores below ``beta`` are zeroed."""
    if not 0.0 <= beta <= 1.0:
        raise ConfigError(f"beta must lie in [0, 1], got {beta}")
    scores = np.asarray(scores, dtype=np.float64)
    flagged = scores >= beta
    return flagged, np.where(flagged, scores, 0.0)


def classify(scores, flagged, tau: float = DEFAULT_TAU) -> list[AnomalyClass]:
    if not 0.0 < tau < 1.0:
        raise ConfigError(f"tau must lie in (0, 1), got {tau}")
    return [AnomalyClass.NONE if not f else
            AnomalyClass.LOCAL if s >= tau else AnomalyClass.GLOBAL
            for s, f in zip(np.asarray(scores), np.asarray(flagged))]


@dataclass(frozen=True)
class ScoreRecord:
    entry_id: str
    E: float
    RE: float
    AP: float
    AS: float
    flagged: bool
    anomaly_class: AnomalyClass
    alpha: float = DEFAULT_ALPHA
    beta: float = DEFAULT_BETA


def score_population(entries, errors, alpha: float = DEFAULT_ALPHA, beta: float = DEFAULT_BETA,
                     tau: float = DEFAULT_TAU, mode: FlagMode | str = FlagMode.AS) -> list[ScoreRecord]:
    """Score every entry from its raw reconstruction error.

    Attribute counts and normalisation extremes come from ``entries`` itself,
    the population being scored. In ``re-only`` mode entries are flagged on
    ``RE >= beta`` instead of ``AS >= beta``. The stored AS is zero for
    entries that are not flagged.
    """
    mode = FlagMode(mode)
    errors = np.asarray(errors, dtype=np.float64)
    if errors.shape != (len(entries),):
        raise DataError(f"{errors.shape[0]} errors for {len(entries)} entries")
    stats = compute_attribute_stats(entries)
    ap = ap_score(stats, entries)
    re = re_score(errors)
    raw = anomaly_score(re, ap, alpha)
    if mode is FlagMode.AS:
        flagged, shown = flag(raw, beta)
    else:
        flagged, _ = flag(re, beta)
        shown = np.where(flagged, raw, 0.0)
    classes = classify(shown, flagged, tau)
    return [ScoreRecord(getattr(e, "entry_id", str(i + 1)), float(errors[i]), float(re[i]),
                        float(ap[i]), float(shown[i]), bool(flagged[i]), classes[i], alpha, beta)
            for i, e in enumerate(entries)]


def _fmt(x: float) -> str:
    return format(x, ".17g")


def _fields(r: ScoreRecord) -> list[str]:
    return [r.entry_id, _fmt(r.E), _fmt(r.RE), _fmt(r.AP), _fmt(r.AS),
            "true" if r.flagged else "false", r.anomaly_class.value]


def write_scores_csv(path, records: Sequence[ScoreRecord], detector: str | None = None) -> None:
    """Write records; ``detector`` adds a trailing tag column (used for baselines)."""
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(list(SCORE_FIELDS) + (["detector"] if detector else []))
        for r in records:
            w.writerow(_fields(r) + ([detector] if detector else []))


def write_scores_jsonl(path, records: Sequence[ScoreRecord], detector: str | None = None) -> None:
    with Path(path).open("w", encoding="utf-8") as fh:
        for r in records:
            vals = _fields(r)
            parts = [f'"entry_id": {json.dumps(r.entry_id)}']
            parts += [f'"{k}": {v}' for k, v in zip(SCORE_FIELDS[1:5], vals[1:5])]
            parts += [f'"flagged": {vals[5]}', f'"class": "{vals[6]}"']
            if detector:
                parts.append(f'"detector": {json.dumps(detector)}')
            fh.write("{" + ", ".join(parts) + "}\n")


def read_scores_csv(path) -> list[ScoreRecord]:
    with Path(path).open(newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        missing = set(SCORE_FIELDS) - set(reader.fieldnames or ())
        if missing:
            raise DataError(f"{path}: score file lacks columns {sorted(missing)}")
        try:
            return [ScoreRecord(row["entry_id"], float(row["E"]), float(row["RE"]), float(row["AP"]),
                                float(row["AS"]), row["flagged"] == "true", AnomalyClass(row["class"]))
                    for row in reader]
        except ValueError as exc:
            raise DataError(f"{path}:{reader.line_num}: {exc}") from None
