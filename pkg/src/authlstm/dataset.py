"""Sliding windows, one-hot tensors, stratified splits and batches."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from functools import cached_property
from typing import Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .encode import EncodedSequence
from .numerics import DTYPE

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class Window:
    """``window_size`` consecutive events and the event that follows them."""

    inputs: np.ndarray
    target: int
    target_label: bool
    target_position: int


@dataclass
class SplitDataset:
    train: list[Window]
    test: list[Window]
    seed: int


class WindowBatch:
    """A batch of windows.

    ``one_hot`` is the ``window_size x vocabulary_size x batch_count`` tensor
    fed to the network; it is built on first access.  ``inputs`` holds the
    same information as integer indices, ``(window_size, batch_count)``.
    """

    def __init__(self, windows: Sequence[Window], vocabulary_size: int):
        if not windows:
            raise ValueError("empty batch")
        self.vocabulary_size = vocabulary_size
        self.inputs = np.stack([w.inputs for w in windows], axis=1).astype(np.int64)
        self.targets = np.array([w.target for w in windows], dtype=np.int64)
        self.labels = np.array([w.target_label for w in windows], dtype=bool)
        self.positions = np.array([w.target_position for w in windows], dtype=np.int64)

    def __len__(self) -> int:
        return len(self.targets)

    @property
    def batch_count(self) -> int:
        return len(self.targets)

    @cached_property
    def one_hot(self) -> np.ndarray:
        T, B = self.inputs.shape
        out = np.zeros((T, self.vocabulary_size, B), dtype=DTYPE)
        t_idx, b_idx = np.meshgrid(np.arange(T), np.arange(B), indexing="ij")
        out[t_idx, self.inputs, b_idx] = 1.0
        return out


def make_windows(seq: EncodedSequence, window_size: int) -> list[Window]:
    """Stride-1 many-to-one windows; the first ``window_size`` events are never targets."""
    if window_size < 1:
        raise ValueError("window_size must be >= 1")
    n = len(seq.indices)
    if n <= window_size:
        logger.warning("user %s has %d events, too few for windows of %d", seq.user, n, window_size)
        return []
    views = sliding_window_view(seq.indices, window_size)
    return [
        Window(views[p - window_size], int(seq.indices[p]), bool(seq.labels[p]), p)
        for p in range(window_size, n)
    ]


def one_hot(index: int, vocabulary_size: int) -> np.ndarray:
    if not 0 <= index < vocabulary_size:
        raise IndexError(f"index {index} outside vocabulary of size {vocabulary_size}")
    v = np.zeros(vocabulary_size, dtype=DTYPE)
    v[index] = 1.0
    return v


def _round_half_up(x: float) -> int:
    return int(math.floor(x + 0.5))


def stratified_split(windows: Sequence[Window], train_fraction: float = 0.8,
                     seed: int = 0) -> SplitDataset:
    """Split each label stratum so ``round((1 - train_fraction) * n)`` goes to test.

    One seeded permutation of all windows orders every stratum, so the
    partition depends on which windows share a label, never on which label
    value they carry.  Both halves keep sequence order.
    """
    if not 0.0 < train_fraction < 1.0:
        raise ValueError("train_fraction must be in (0, 1)")
    n = len(windows)
    rank = np.empty(n, dtype=np.int64)
    rank[np.random.default_rng(seed).permutation(n)] = np.arange(n)
    is_test = np.zeros(n, dtype=bool)
    labels = np.array([w.target_label for w in windows], dtype=bool)
    for value in (False, True):
        members = np.flatnonzero(labels == value)
        if len(members) == 0:
            continue
        if len(members) < 2:
            logger.warning("stratum with %d member(s) kept entirely in training", len(members))
            continue
        n_test = _round_half_up((1.0 - train_fraction) * len(members))
        chosen = members[np.argsort(rank[members], kind="stable")[:n_test]]
        is_test[chosen] = True
    train = [w for w, t in zip(windows, is_test) if not t]
    test = [w for w, t in zip(windows, is_test) if t]
    return SplitDataset(train, test, seed)


def batch_windows(windows: Sequence[Window], batch_size: int, vocabulary_size: int) -> list[WindowBatch]:
    """``ceil(n / batch_size)`` batches in order; the last one may be short."""
    if batch_size < 1:
        raise ValueError("batch_size must be >= 1")
    return [WindowBatch(windows[i:i + batch_size], vocabulary_size)
            for i in range(0, len(windows), batch_size)]


def batches_per_epoch(n_windows: int, batch_size: int) -> int:
    return math.ceil(n_windows / batch_size)
