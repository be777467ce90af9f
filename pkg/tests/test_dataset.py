from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from authlstm.dataset import (WindowBatch, batch_windows, batches_per_epoch, make_windows, one_hot,
                              stratified_split)

from conftest import make_sequence


class TestWindows:
    def test_enumeration(self):
        ws = make_windows(make_sequence([2, 0, 1, 3, 2, 1]), 3)
        assert [(w.inputs.tolist(), w.target) for w in ws] == [
            ([2, 0, 1], 3), ([0, 1, 3], 2), ([1, 3, 2], 1)]
        assert [w.target_position for w in ws] == [3, 4, 5]

    def test_count_arithmetic(self):
        assert len(make_windows(make_sequence(np.zeros(44_150, dtype=int)), 30)) == 44_120

    def test_too_short(self, caplog):
        assert make_windows(make_sequence([1, 2, 3]), 3) == []
        assert "too few" in caplog.text

    def test_labels_follow_target(self):
        ws = make_windows(make_sequence([0, 1, 0, 1, 0], [True, False, False, True, False]), 2)
        assert [w.target_label for w in ws] == [False, True, False]


class TestOneHot:
    @pytest.mark.parametrize("index, size, expected", [(2, 4, [0, 0, 1, 0]), (0, 1, [1])])
    def test_examples(self, index, size, expected):
        assert one_hot(index, size).tolist() == expected

    def test_large(self):
        v = one_hot(811, 812)
        assert v[-1] == 1.0 and v.sum() == 1.0

    @pytest.mark.parametrize("index", [-1, 4])
    def test_out_of_range(self, index):
        with pytest.raises(IndexError):
            one_hot(index, 4)

    def test_batch_tensor(self):
        ws = make_windows(make_sequence([0, 1, 2, 3, 0, 1]), 3)
        b = WindowBatch(ws, 4)
        assert b.one_hot.shape == (3, 4, 3)
        assert np.all(b.one_hot.sum(axis=1) == 1.0)
        for k, w in enumerate(ws):
            assert b.one_hot[:, :, k].argmax(axis=1).tolist() == w.inputs.tolist()


def _labelled(n_normal, n_red):
    labels = [False] * n_normal + [True] * n_red
    order = np.random.default_rng(0).permutation(len(labels))
    seq = make_sequence(np.zeros(len(labels) + 1, dtype=int), [False] + [labels[i] for i in order])
    return make_windows(seq, 1)


class TestSplit:
    @pytest.mark.parametrize("seed", [0, 1, 99])
    def test_exact_proportions(self, seed):
        split = stratified_split(_labelled(100, 10), 0.8, seed)
        assert sum(not w.target_label for w in split.train) == 80
        assert sum(w.target_label for w in split.train) == 8
        assert sum(not w.target_label for w in split.test) == 20
        assert sum(w.target_label for w in split.test) == 2

    def test_no_red(self):
        split = stratified_split(_labelled(100, 0), 0.8, 3)
        assert (len(split.train), len(split.test)) == (80, 20)

    def test_deterministic(self):
        a = stratified_split(_labelled(50, 5), 0.8, 7)
        b = stratified_split(_labelled(50, 5), 0.8, 7)
        assert [w.target_position for w in a.test] == [w.target_position for w in b.test]

    def test_single_red_stays_in_training(self):
        split = stratified_split(_labelled(20, 1), 0.8, 0)
        assert sum(w.target_label for w in split.train) == 1

    def test_bad_fraction(self):
        with pytest.raises(ValueError):
            stratified_split(_labelled(5, 0), 1.0)

    @settings(max_examples=40, deadline=None)
    @given(st.lists(st.booleans(), min_size=2, max_size=80), st.integers(0, 10_000))
    def test_label_inversion_gives_same_partition(self, labels, seed):
        seq = make_sequence(np.zeros(len(labels) + 1, dtype=int), [False] + labels)
        inv = make_sequence(np.zeros(len(labels) + 1, dtype=int), [False] + [not x for x in labels])
        a = stratified_split(make_windows(seq, 1), 0.8, seed)
        b = stratified_split(make_windows(inv, 1), 0.8, seed)
        assert [w.target_position for w in a.train] == [w.target_position for w in b.train]

    @settings(max_examples=40, deadline=None)
    @given(st.lists(st.booleans(), min_size=2, max_size=80), st.integers(0, 10_000),
           st.floats(0.05, 0.95))
    def test_conservation(self, labels, seed, fraction):
        ws = make_windows(make_sequence(np.zeros(len(labels) + 1, dtype=int), [False] + labels), 1)
        split = stratified_split(ws, fraction, seed)
        assert len(split.train) + len(split.test) == len(ws)
        got = sorted(w.target_position for w in split.train + split.test)
        assert got == [w.target_position for w in ws]
        for value in (False, True):
            assert sum(w.target_label == value for w in split.train + split.test) == labels.count(value)


class TestBatching:
    def test_nine_batches(self):
        assert batches_per_epoch(44_439, 5_000) == 9

    def test_sizes(self):
        ws = make_windows(make_sequence(np.arange(11) % 3), 1)
        assert [len(b) for b in batch_windows(ws, 3, 3)] == [3, 3, 3, 1]

    def test_single(self):
        ws = make_windows(make_sequence([0, 1]), 1)
        (b,) = batch_windows(ws, 5, 2)
        assert b.batch_count == 1
        assert b.targets.tolist() == [1]

    def test_empty_batch_rejected(self):
        with pytest.raises(ValueError):
            WindowBatch([], 3)


@settings(max_examples=60)
@given(st.lists(st.integers(0, 9), min_size=2, max_size=60), st.integers(1, 8))
def test_window_reconstruction(indices, size):
    ws = make_windows(make_sequence(indices), size)
    if len(indices) <= size:
        assert ws == []
        return
    rebuilt = list(ws[0].inputs) + [w.target for w in ws]
    assert rebuilt == indices
    for w in ws:
        assert w.inputs.tolist() == indices[w.target_position - size:w.target_position]
