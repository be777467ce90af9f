"""Confusion matrices, ROC curves and per-user detection summaries."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .detect import PredictionRecord, segment_quadrants


class RocUndefinedError(ValueError):
    """ROC needs at least one positive and one negative example."""


@dataclass(frozen=True)
class ConfusionMatrix:
    true_positive: int
    false_negative: int
    false_positive: int
    true_negative: int

    @property
    def total(self) -> int:
        return self.true_positive + self.false_negative + self.false_positive + self.true_negative


@dataclass
class RocCurve:
    points: list[tuple[float, float]]     # (false positive rate, true positive rate)
    thresholds: list[float]               # score threshold of each point; inf for (0, 0)
    auc: float


def confusion(scores: Sequence[float], labels: Sequence[bool], threshold: float) -> ConfusionMatrix:
    """Predict positive when ``score >= threshold``."""
    s = np.asarray(scores, dtype=float)
    y = np.asarray(labels, dtype=bool)
    pred = s >= threshold
    return ConfusionMatrix(
        true_positive=int(np.sum(pred & y)),
        false_negative=int(np.sum(~pred & y)),
        false_positive=int(np.sum(pred & ~y)),
        true_negative=int(np.sum(~pred & ~y)),
    )


def sensitivity(cm: ConfusionMatrix) -> float | None:
    """True positive rate; ``None`` when there are no positives."""
    pos = cm.true_positive + cm.false_negative
    return cm.true_positive / pos if pos else None


def specificity(cm: ConfusionMatrix) -> float | None:
    """True negative rate; ``None`` when there are no negatives."""
    neg = cm.false_positive + cm.true_negative
    return cm.true_negative / neg if neg else None


def roc(scores: Sequence[float], labels: Sequence[bool]) -> RocCurve:
    """Sweep every distinct score as a threshold, highest first.

    The area is accumulated with the trapezoidal rule in integer units and
    divided once at the end, so tied scores count exactly one half.
    """
    s = np.asarray(scores, dtype=float)
    y = np.asarray(labels, dtype=bool)
    P = int(y.sum())
    N = len(y) - P
    if P == 0 or N == 0:
        raise RocUndefinedError("ROC undefined: need both positive and negative labels")
    order = np.argsort(-s, kind="stable")
    s, y = s[order], y[order]
    last_of_group = np.flatnonzero(np.r_[s[1:] != s[:-1], True])
    tp = np.cumsum(y)[last_of_group]
    fp = np.cumsum(~y)[last_of_group]
    tp = np.r_[0, tp].astype(np.int64)
    fp = np.r_[0, fp].astype(np.int64)
    twice_area = int(np.sum((fp[1:] - fp[:-1]) * (tp[1:] + tp[:-1])))
    points = [(int(f) / N, int(t) / P) for f, t in zip(fp, tp)]
    thresholds = [math.inf] + s[last_of_group].tolist()
    return RocCurve(points, thresholds, twice_area / (2 * P * N))


def evaluate_user(predictions: Sequence[PredictionRecord], threshold: float = 0.5, k: int = 10,
                  labels_loaded: bool = True) -> tuple[RocCurve | None, dict]:
    """Red-team ROC over anomaly scores plus the summary written next to it."""
    n = len(predictions)
    report = segment_quadrants(predictions, threshold, k)
    red = sum(r.is_red_team for r in predictions)
    summary = {
        "predictions": n,
        "red_team": red if labels_loaded else None,
        "top1_accuracy": sum(r.correct for r in predictions) / n if n else None,
        "auc": None,
        "roc_available": False,
        "threat_in_top_k": any(r.is_red_team for r in report.ranked_low_incorrect) if labels_loaded else None,
        "k": k,
        "counts": report.counts,
    }
    curve = None
    if labels_loaded:
        try:
            curve = roc([r.anomaly_score for r in predictions], [r.is_red_team for r in predictions])
        except RocUndefinedError as exc:
            summary["note"] = str(exc)
        else:
            summary["auc"] = curve.auc
            summary["roc_available"] = True
    else:
        summary["note"] = "ROC unavailable: no red-team labels were loaded"
    return curve, summary


def roc_path(directory, user: str) -> Path:
    return Path(directory) / f"{user}.roc.csv"


def summary_path(directory, user: str) -> Path:
    return Path(directory) / f"{user}.summary.json"


def write_roc(curve: RocCurve, path) -> None:
    lines = ["threshold,fpr,tpr\n"]
    lines += [f"{t!r},{f!r},{p!r}\n" for t, (f, p) in zip(curve.thresholds, curve.points)]
    Path(path).write_text("".join(lines))


def write_summary(summary: dict, path) -> None:
    Path(path).write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")
