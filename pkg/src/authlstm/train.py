"""Per-user training loop, training traces and model files."""

from __future__ import annotations

import json
import logging
import os
import tempfile
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import NamedTuple

import numpy as np

from . import nn
from .dataset import SplitDataset, WindowBatch, make_windows, stratified_split
from .encode import EncodedSequence, EventDictionary

logger = logging.getLogger(__name__)

MODEL_FORMAT = "authlstm-model/1"
# batches larger than this (in tensor elements) are fed as indices instead of one-hot
ONE_HOT_LIMIT = 1 << 24


class TooFewEventsError(ValueError):
    pass


class ModelFileError(ValueError):
    """Model file unreadable or not a model."""


class ChecksumMismatchError(ModelFileError):
    """Model was trained against a different event dictionary."""


@dataclass
class TrainingConfig:
    epochs: int = 30
    batch_size: int = 5000
    learning_rate: float = 0.1
    window_size: int = 30
    hidden_size: int = 64
    dropout_rate: float = 0.2
    clip_norm: float = 5.0
    train_fraction: float = 0.8
    seed: int = 0

    def __post_init__(self):
        for name in ("epochs", "batch_size", "window_size", "hidden_size"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")
        if self.learning_rate <= 0 or self.clip_norm <= 0:
            raise ValueError("learning_rate and clip_norm must be positive")
        if not 0.0 <= self.dropout_rate < 1.0:
            raise ValueError("dropout_rate must be in [0, 1)")
        if not 0.0 < self.train_fraction < 1.0:
            raise ValueError("train_fraction must be in (0, 1)")

    def to_dict(self) -> dict:
        return asdict(self)


class TraceRecord(NamedTuple):
    epoch: int
    batch: int
    cost: float
    accuracy: float
    elapsed_ms: float


@dataclass
class TrainingTrace:
    records: list[TraceRecord] = field(default_factory=list)
    total_duration: float = 0.0

    def __len__(self) -> int:
        return len(self.records)

    @property
    def last_batch_accuracy(self) -> float:
        return self.records[-1].accuracy if self.records else float("nan")

    def costs(self) -> list[float]:
        return [r.cost for r in self.records]

    def epoch_mean_cost(self, epoch: int) -> float:
        return float(np.mean([r.cost for r in self.records if r.epoch == epoch]))


def model_input(batch: WindowBatch) -> np.ndarray:
    """One-hot tensor when affordable, integer indices otherwise (same numbers)."""
    T, B = batch.inputs.shape
    if T * B * batch.vocabulary_size <= ONE_HOT_LIMIT:
        return batch.one_hot
    return batch.inputs


def batch_accuracy(model: nn.LstmModel, batch: WindowBatch) -> float:
    """Share of windows whose most probable event is the actual one (dropout off)."""
    if len(batch) == 0:
        raise ValueError("accuracy of an empty batch")
    probs, _ = nn.forward_batch(model, model_input(batch))
    return float(np.mean(probs.argmax(axis=1) == batch.targets))


def train_user(seq: EncodedSequence, dictionary: EventDictionary, config: TrainingConfig,
               model_path=None) -> tuple[nn.LstmModel, SplitDataset, TrainingTrace]:
    """Window, split, and fit one user's model with plain mini-batch SGD.

    Training windows are reshuffled every epoch.  Red-team labels only
    steer which windows land in the test split; no training computation
    reads them.
    """
    V = dictionary.vocabulary_size
    if len(seq) < config.window_size + 2 or V < 2:
        raise TooFewEventsError(
            f"user {seq.user}: {len(seq)} events / {V} distinct is too little data to "
            f"train with windows of {config.window_size}")
    windows = make_windows(seq, config.window_size)
    split = stratified_split(windows, config.train_fraction, config.seed)
    model = nn.init_model(V, config.hidden_size, config.window_size, config.dropout_rate, config.seed)
    rng = np.random.default_rng([config.seed, 1])
    train = split.train
    trace = TrainingTrace()
    start = time.perf_counter()
    for epoch in range(config.epochs):
        order = rng.permutation(len(train))
        for b, lo in enumerate(range(0, len(train), config.batch_size)):
            batch = WindowBatch([train[i] for i in order[lo:lo + config.batch_size]], V)
            probs, cache = nn.forward_batch(model, model_input(batch), train=True, rng=rng)
            batch_cost = float(nn.batch_losses(probs, batch.targets).mean())
            accuracy = float(np.mean(cache.infer_probs.argmax(axis=1) == batch.targets))
            grads = nn.backward(model, batch.targets, cache)
            model = nn.sgd_step(model, grads, config.learning_rate, config.clip_norm)
            elapsed = (time.perf_counter() - start) * 1000.0
            trace.records.append(TraceRecord(epoch, b, batch_cost, accuracy, elapsed))
        logger.info("%s epoch %d/%d cost %.4f acc %.4f", seq.user, epoch + 1, config.epochs,
                    trace.records[-1].cost, trace.records[-1].accuracy)
    trace.total_duration = time.perf_counter() - start
    if model_path is not None:
        save_model(model, dictionary.checksum(), model_path)
    return model, split, trace


# -- files ------------------------------------------------------------------------

def model_path(directory, user: str) -> Path:
    return Path(directory) / f"{user}.model.json"


def trace_path(directory, user: str) -> Path:
    return Path(directory) / f"{user}.trace.csv"


def atomic_write_text(path, text: str) -> None:
    path = Path(path)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def save_model(model: nn.LstmModel, dict_checksum: str, path) -> None:
    doc = {"format": MODEL_FORMAT, "dictionary_checksum": dict_checksum, **model.to_dict()}
    atomic_write_text(path, json.dumps(doc) + "\n")


def load_model(path, dict_checksum: str | None = None) -> nn.LstmModel:
    """Read a model file; with ``dict_checksum`` the dictionary pairing is verified."""
    try:
        doc = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise ModelFileError(f"{path}: not a valid model file ({exc})") from exc
    if not isinstance(doc, dict) or doc.get("format") != MODEL_FORMAT:
        raise ModelFileError(f"{path}: not an {MODEL_FORMAT} document")
    if dict_checksum is not None and doc.get("dictionary_checksum") != dict_checksum:
        raise ChecksumMismatchError(f"{path}: model was trained with a different event dictionary")
    try:
        return nn.LstmModel.from_dict(doc)
    except ValueError as exc:
        raise ModelFileError(f"{path}: {exc}") from exc


def write_trace(trace: TrainingTrace, path) -> None:
    lines = ["epoch,batch,cost,accuracy,elapsed_ms\n"]
    lines += [f"{r.epoch},{r.batch},{r.cost!r},{r.accuracy!r},{r.elapsed_ms:.3f}\n" for r in trace.records]
    Path(path).write_text("".join(lines))
