from __future__ import annotations

import math
from dataclasses import fields

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from authlstm import nn
from authlstm.dataset import WindowBatch, make_windows
from authlstm.numerics import ShapeError

from conftest import make_sequence


def zero_cell(hidden, inputs):
    return nn.LstmCellParams(**{
        f.name: np.zeros((hidden, hidden + inputs)) if f.name.startswith("W") else np.zeros(hidden)
        for f in fields(nn.LstmCellParams)})


def random_model(V=5, H=4, T=3, dropout=0.0, seed=1, scale=0.5):
    m = nn.init_model(V, H, T, dropout, seed)
    rng = np.random.default_rng(seed + 100)
    return m.with_arrays({k: rng.normal(0, scale, a.shape) for k, a in m.named_arrays()})


def one_hot_inputs(idx, V):
    T, B = idx.shape
    x = np.zeros((T, V, B))
    for t in range(T):
        x[t, idx[t], np.arange(B)] = 1.0
    return x


class TestInit:
    def test_deterministic(self):
        a, b = nn.init_model(7, 5, 3, 0.2, 42), nn.init_model(7, 5, 3, 0.2, 42)
        for (na, xa), (nb, xb) in zip(a.named_arrays(), b.named_arrays()):
            assert na == nb and np.array_equal(xa, xb)

    def test_seed_matters(self):
        a, b = nn.init_model(7, 5, 3, 0.2, 1), nn.init_model(7, 5, 3, 0.2, 2)
        assert not np.array_equal(a.dense_W, b.dense_W)

    def test_head_shape_follows_vocabulary(self):
        m = nn.init_model(182, 64, 30, 0.2, 0)
        assert m.dense_W.shape == (182, 64)
        assert m.cell1.W_f.shape == (64, 64 + 182)
        assert m.cell2.W_f.shape == (64, 128)

    def test_forget_bias_one(self):
        m = nn.init_model(4, 3, 2, 0.0, 0)
        assert np.all(m.cell1.b_f == 1.0) and np.all(m.cell2.b_i == 0.0)

    @pytest.mark.parametrize("kwargs", [
        dict(vocabulary_size=1, hidden_size=4, window_size=3, dropout_rate=0.0, seed=0),
        dict(vocabulary_size=4, hidden_size=0, window_size=3, dropout_rate=0.0, seed=0),
        dict(vocabulary_size=4, hidden_size=4, window_size=3, dropout_rate=1.0, seed=0),
    ])
    def test_rejects(self, kwargs):
        with pytest.raises(ValueError):
            nn.init_model(**kwargs)

    def test_dict_round_trip(self):
        m = random_model()
        back = nn.LstmModel.from_dict(m.to_dict())
        for (_, a), (_, b) in zip(m.named_arrays(), back.named_arrays()):
            assert np.array_equal(a, b)
        assert back.metadata() == m.metadata()


class TestLstmStep:
    @pytest.mark.parametrize("c0", [-2.0, -0.3, 0.0, 0.7, 5.0])
    def test_zero_parameters(self, c0):
        H, I = 3, 2
        prev = nn.LstmState(h=np.full(H, 0.4), c=np.full(H, c0))
        out = nn.lstm_step(zero_cell(H, I), np.array([1.0, 0.0]), prev)
        np.testing.assert_allclose(out.c, 0.5 * c0, rtol=0, atol=1e-12)
        np.testing.assert_allclose(out.h, 0.5 * math.tanh(0.5 * c0), rtol=0, atol=1e-12)

    def test_zero_state_fixed_point(self):
        out = nn.lstm_step(zero_cell(4, 3), np.array([0.0, 1.0, 0.0]),
                           nn.LstmState(np.zeros(4), np.zeros(4)))
        assert np.all(out.h == 0.0) and np.all(out.c == 0.0)

    def test_wrong_input_size(self):
        with pytest.raises(ShapeError):
            nn.lstm_step(zero_cell(2, 3), np.ones(4), nn.LstmState(np.zeros(2), np.zeros(2)))

    def test_batched_loop_matches_step(self, rng):
        m = random_model(V=6, H=5, T=4)
        idx = rng.integers(0, 6, size=(4, 1))
        s1 = nn.LstmState(np.zeros(5), np.zeros(5))
        s2 = nn.LstmState(np.zeros(5), np.zeros(5))
        for t in range(4):
            s1 = nn.lstm_step(m.cell1, np.eye(6)[idx[t, 0]], s1)
            s2 = nn.lstm_step(m.cell2, s1.h, s2)
        logits = m.dense_W @ s2.h + m.dense_b
        expected = np.exp(logits - logits.max())
        expected /= expected.sum()
        probs, _ = nn.forward_batch(m, idx)
        np.testing.assert_allclose(probs[0], expected, rtol=1e-12, atol=1e-15)


class TestForward:
    def test_probability_vector(self, rng):
        m = random_model(V=9, H=4, T=5)
        probs, _ = nn.forward(m, rng.integers(0, 9, 5))
        assert probs.shape == (9,)
        assert abs(probs.sum() - 1.0) < 1e-12

    def test_infer_deterministic(self, rng):
        m = random_model(dropout=0.5)
        x = one_hot_inputs(rng.integers(0, 5, (3, 6)), 5)
        p1, _ = nn.forward_batch(m, x)
        p2, _ = nn.forward_batch(m, x)
        assert np.array_equal(p1, p2)

    def test_dropout_zero_train_equals_infer(self, rng):
        m = random_model(dropout=0.0)
        x = rng.integers(0, 5, (3, 6))
        p1, _ = nn.forward_batch(m, x, train=True, rng=np.random.default_rng(0))
        p2, _ = nn.forward_batch(m, x)
        assert np.array_equal(p1, p2)

    def test_train_mode_seeded(self, rng):
        m = random_model(dropout=0.5)
        x = rng.integers(0, 5, (3, 6))
        p1, _ = nn.forward_batch(m, x, train=True, rng=np.random.default_rng(9))
        p2, _ = nn.forward_batch(m, x, train=True, rng=np.random.default_rng(9))
        p3, _ = nn.forward_batch(m, x)
        assert np.array_equal(p1, p2)
        assert not np.array_equal(p1, p3)

    def test_train_mode_needs_rng(self):
        m = random_model(dropout=0.3)
        with pytest.raises(ValueError):
            nn.forward_batch(m, np.zeros((3, 2), dtype=np.int64), train=True)

    def test_mode_validated(self):
        with pytest.raises(ValueError):
            nn.forward(random_model(), np.zeros(3, dtype=np.int64), mode="eval")

    def test_index_and_one_hot_paths_agree(self, rng):
        m = random_model(V=7, H=3, T=4)
        idx = rng.integers(0, 7, (4, 5))
        y = rng.integers(0, 7, 5)
        p1, c1 = nn.forward_batch(m, idx)
        p2, c2 = nn.forward_batch(m, one_hot_inputs(idx, 7))
        np.testing.assert_allclose(p1, p2, rtol=1e-13, atol=1e-16)
        g1, g2 = nn.backward(m, y, c1), nn.backward(m, y, c2)
        for k in g1:
            np.testing.assert_allclose(g1[k], g2[k], rtol=1e-11, atol=1e-15)

    @pytest.mark.parametrize("bad", [np.zeros((2, 5, 1)), np.zeros((3, 4, 1)), np.zeros((3, 1), dtype=np.int64) + 9])
    def test_shape_errors(self, bad):
        with pytest.raises(ShapeError):
            nn.forward_batch(random_model(), bad)

    @settings(max_examples=25, deadline=None)
    @given(st.integers(0, 2**31 - 1), st.floats(0.1, 30.0))
    def test_hidden_state_bounded(self, seed, scale):
        m = random_model(V=4, H=3, T=6, seed=seed % 1000, scale=scale)
        idx = np.random.default_rng(seed).integers(0, 4, (6, 8))
        _, cache = nn.forward_batch(m, idx)
        for cell in (cache.cell1, cache.cell2):
            assert np.all(np.abs(cell.hs) <= 1.0)
            assert np.all(np.isfinite(cell.cs))


class TestLoss:
    @pytest.mark.parametrize("p, target, expected", [
        ([0.0, 1.0, 0.0], 1, 0.0),
        ([0.25] * 4, 2, math.log(4)),
        ([0.5, 0.5], 0, math.log(2)),
    ])
    def test_examples(self, p, target, expected):
        assert nn.loss(np.array(p), target) == pytest.approx(expected, abs=1e-12)

    def test_floor(self):
        assert nn.loss(np.array([1.0, 0.0]), 1) == pytest.approx(-math.log(1e-15))

    def test_identical_windows_cost(self):
        m = random_model()
        x = np.tile(np.array([[1], [3], [0]]), (1, 6))
        y = np.full(6, 2)
        probs, _ = nn.forward(m, x[:, 0])
        assert nn.cost(m, x, y) == pytest.approx(nn.loss(probs, 2), rel=1e-13)

    def test_perfect_predictor_cost(self):
        m = random_model()
        b = np.full(5, -60.0)
        b[2] = 60.0
        m = m.with_arrays({"dense_W": np.zeros_like(m.dense_W), "dense_b": b})
        assert nn.cost(m, np.zeros((3, 4), dtype=np.int64), np.full(4, 2)) < 1e-15

    def test_empty_batch(self):
        with pytest.raises(ValueError):
            nn.cost(random_model(), np.zeros((3, 0), dtype=np.int64), np.zeros(0, dtype=np.int64))


class TestBackward:
    def test_gradient_check_small_model(self, rng):
        m = random_model()
        idx = rng.integers(0, 5, (3, 2))
        errors = nn.gradient_check(m, one_hot_inputs(idx, 5), rng.integers(0, 5, 2))
        assert set(errors) == {name for name, _ in m.named_arrays()}
        assert max(errors.values()) < 1e-6

    def test_gradient_check_index_path(self, rng):
        m = random_model(V=4, H=3, T=2, seed=3)
        errors = nn.gradient_check(m, rng.integers(0, 4, (2, 3)), rng.integers(0, 4, 3))
        assert max(errors.values()) < 1e-6

    def test_dropout_gradients_match_masked_cost(self, rng):
        m = random_model(dropout=0.5)
        idx = rng.integers(0, 5, (3, 4))
        y = rng.integers(0, 5, 4)
        _, cache = nn.forward_batch(m, idx, train=True, rng=np.random.default_rng(1))
        g = nn.backward(m, y, cache)
        # numeric derivative of dense_b under the same mask
        eps = 1e-6
        for j in range(5):
            b_up, b_dn = m.dense_b.copy(), m.dense_b.copy()
            b_up[j] += eps
            b_dn[j] -= eps
            up = nn.cost(m.with_arrays({"dense_b": b_up}), idx, y, rng=np.random.default_rng(1))
            dn = nn.cost(m.with_arrays({"dense_b": b_dn}), idx, y, rng=np.random.default_rng(1))
            assert g["dense_b"][j] == pytest.approx((up - dn) / (2 * eps), abs=1e-8)

    def test_perfect_prediction_zero_gradient(self):
        m = random_model()
        b = np.full(5, -40.0)
        b[1] = 40.0
        m = m.with_arrays({"dense_b": b})
        _, cache = nn.forward_batch(m, np.zeros((3, 2), dtype=np.int64))
        assert nn.global_norm(nn.backward(m, np.array([1, 1]), cache)) < 1e-12

    def test_stale_cache(self):
        m = random_model()
        _, cache = nn.forward_batch(m, np.zeros((3, 2), dtype=np.int64))
        with pytest.raises(nn.StaleCacheError):
            nn.backward(m.copy(), np.array([0, 1]), cache)

    def test_target_shape(self):
        m = random_model()
        _, cache = nn.forward_batch(m, np.zeros((3, 2), dtype=np.int64))
        with pytest.raises(ShapeError):
            nn.backward(m, np.array([0, 1, 2]), cache)


class TestSgd:
    def test_zero_gradients_leave_model(self):
        m = random_model()
        zero = {k: np.zeros_like(a) for k, a in m.named_arrays()}
        new = nn.sgd_step(m, zero, 1.0)
        for (_, a), (_, b) in zip(m.named_arrays(), new.named_arrays()):
            assert np.array_equal(a, b)

    def test_scalar_arithmetic(self):
        m = random_model()
        b = m.dense_b.copy()
        b[0] = 2.0
        m = m.with_arrays({"dense_b": b})
        g = {k: np.zeros_like(a) for k, a in m.named_arrays()}
        g["dense_b"][0] = 0.5
        assert nn.sgd_step(m, g, 1.0).dense_b[0] == 1.5

    def test_clipping_halves_step(self):
        m = random_model()
        g = {k: np.zeros_like(a) for k, a in m.named_arrays()}
        g["dense_b"][:] = 0.0
        g["dense_b"][:2] = [6.0, 8.0]          # norm 10
        new = nn.sgd_step(m, g, 1.0, clip_norm=5.0)
        np.testing.assert_allclose(m.dense_b - new.dense_b, [3.0, 4.0, 0, 0, 0], atol=1e-15)

    def test_returns_new_model(self):
        m = random_model()
        g = {k: np.ones_like(a) for k, a in m.named_arrays()}
        before = m.dense_W.copy()
        nn.sgd_step(m, g, 0.1)
        assert np.array_equal(m.dense_W, before)

    def test_divergence(self):
        m = random_model()
        g = {k: np.zeros_like(a) for k, a in m.named_arrays()}
        g["dense_W"][0, 0] = np.nan
        with pytest.raises(nn.DivergenceError):
            nn.sgd_step(m, g, 0.1)

    def test_small_step_never_increases_cost(self):
        rng = np.random.default_rng(2024)
        for trial in range(100):
            m = random_model(seed=trial)
            idx = rng.integers(0, 5, (3, 2))
            y = rng.integers(0, 5, 2)
            _, cache = nn.forward_batch(m, idx)
            before = nn.cost(m, idx, y)
            after = nn.cost(nn.sgd_step(m, nn.backward(m, y, cache), 1e-3), idx, y)
            assert after <= before


def test_batch_from_windows_feeds_model():
    seq = make_sequence([0, 1, 2, 3, 0, 1, 2, 3])
    batch = WindowBatch(make_windows(seq, 3), 4)
    m = nn.init_model(4, 3, 3, 0.0, 0)
    p1, _ = nn.forward_batch(m, batch.one_hot)
    p2, _ = nn.forward_batch(m, batch.inputs)
    np.testing.assert_allclose(p1, p2, rtol=1e-13)
