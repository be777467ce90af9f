"""Scoring held-out windows and ranking the suspicious ones for an analyst."""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from datetime import datetime
from pathlib import Path
from typing import NamedTuple, Sequence

import numpy as np

from . import nn
from .dataset import Window, WindowBatch
from .encode import EventDictionary

QUADRANTS = ("high_correct", "high_incorrect", "low_correct", "low_incorrect")


class PredictionRecord(NamedTuple):
    window_position: int
    timestamp: datetime | None
    predicted_index: int
    predicted_probability: float
    actual_index: int
    actual_probability: float
    correct: bool
    anomaly_score: float
    is_red_team: bool


@dataclass
class QuadrantReport:
    threshold: float
    counts: dict[str, int]
    ranked_low_incorrect: list[PredictionRecord] = field(default_factory=list)
    ranked_high_incorrect: list[PredictionRecord] = field(default_factory=list)


def predict_all(model: nn.LstmModel, windows: Sequence[Window],
                timestamps: Sequence[datetime] | None = None,
                batch_size: int = 1000) -> list[PredictionRecord]:
    """One record per window, dropout off, in input order."""
    records: list[PredictionRecord] = []
    for lo in range(0, len(windows), batch_size):
        chunk = windows[lo:lo + batch_size]
        batch = WindowBatch(chunk, model.vocabulary_size)
        if batch.inputs.shape[0] != model.window_size:
            raise nn.ShapeError(
                f"windows of {batch.inputs.shape[0]} events, model expects {model.window_size}")
        probs, _ = nn.forward_batch(model, batch.inputs)
        predicted = probs.argmax(axis=1)
        rows = np.arange(len(chunk))
        p_pred = probs[rows, predicted]
        p_act = probs[rows, batch.targets]
        for w, pi, pp, pa in zip(chunk, predicted.tolist(), p_pred.tolist(), p_act.tolist()):
            records.append(PredictionRecord(
                window_position=w.target_position,
                timestamp=timestamps[w.target_position] if timestamps is not None else None,
                predicted_index=pi,
                predicted_probability=pp,
                actual_index=w.target,
                actual_probability=pa,
                correct=pi == w.target,
                anomaly_score=1.0 - pa,
                is_red_team=w.target_label,
            ))
    return records


def quadrant(record: PredictionRecord, threshold: float) -> str:
    level = "high" if record.predicted_probability >= threshold else "low"
    return f"{level}_{'correct' if record.correct else 'incorrect'}"


def segment_quadrants(records: Sequence[PredictionRecord], threshold: float = 0.5,
                      k: int = 10) -> QuadrantReport:
    """Count predictions per confidence/correctness quadrant and rank the incorrect ones.

    ``ranked_low_incorrect`` holds the k incorrect predictions the model was
    least sure of, ``ranked_high_incorrect`` the k it was most sure of;
    ties go to the earlier window.
    """
    if not 0.0 < threshold < 1.0:
        raise ValueError("threshold must be in (0, 1)")
    if k < 1:
        raise ValueError("k must be >= 1")
    counts = dict.fromkeys(QUADRANTS, 0)
    for r in records:
        counts[quadrant(r, threshold)] += 1
    incorrect = [r for r in records if not r.correct]
    low = sorted(incorrect, key=lambda r: (r.predicted_probability, r.window_position))[:k]
    high = sorted(incorrect, key=lambda r: (-r.predicted_probability, r.window_position))[:k]
    return QuadrantReport(threshold, counts, low, high)


# -- files ------------------------------------------------------------------------

PREDICTION_COLUMNS = ["window_position", "timestamp", "predicted_index", "predicted_prob",
                      "actual_index", "actual_prob", "anomaly_score", "correct", "is_red_team"]


def predictions_path(directory, user: str) -> Path:
    return Path(directory) / f"{user}.predictions.csv"


def report_path(directory, user: str) -> Path:
    return Path(directory) / f"{user}.report.csv"


def write_predictions(records: Sequence[PredictionRecord], path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(PREDICTION_COLUMNS)
        for r in records:
            w.writerow([r.window_position, r.timestamp.isoformat() if r.timestamp else "",
                        r.predicted_index, repr(r.predicted_probability), r.actual_index,
                        repr(r.actual_probability), repr(r.anomaly_score), int(r.correct),
                        int(r.is_red_team)])


def read_predictions(path) -> list[PredictionRecord]:
    out = []
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            out.append(PredictionRecord(
                window_position=int(row["window_position"]),
                timestamp=datetime.fromisoformat(row["timestamp"]) if row["timestamp"] else None,
                predicted_index=int(row["predicted_index"]),
                predicted_probability=float(row["predicted_prob"]),
                actual_index=int(row["actual_index"]),
                actual_probability=float(row["actual_prob"]),
                correct=row["correct"] == "1",
                anomaly_score=float(row["anomaly_score"]),
                is_red_team=row["is_red_team"] == "1",
            ))
    return out


def write_report(report: QuadrantReport, dictionary: EventDictionary, path,
                 labels_loaded: bool = True) -> None:
    """CSV of both ranked lists with decoded events, ready for an analyst."""
    header = ["list", "rank", "timestamp", "predicted_event", "probability", "actual_event"]
    if labels_loaded:
        header.append("is_red_team")
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for name, ranked in (("low_incorrect", report.ranked_low_incorrect),
                             ("high_incorrect", report.ranked_high_incorrect)):
            for rank, r in enumerate(ranked, 1):
                row = [name, rank, r.timestamp.isoformat() if r.timestamp else "",
                       dictionary.key_of[r.predicted_index].label(), repr(r.predicted_probability),
                       dictionary.key_of[r.actual_index].label()]
                if labels_loaded:
                    row.append(int(r.is_red_team))
                w.writerow(row)
