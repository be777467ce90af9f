"""Checking backpropagation through time against finite differences.

A tiny two-layer LSTM is enough: every parameter is perturbed in both
directions and the slope of the cost is compared with the analytic gradient.
"""

from __future__ import annotations

import numpy as np

from authlstm import nn

rng = np.random.default_rng(0)

# vocabulary 5, hidden 4, window 3, no dropout
model = nn.init_model(5, 4, 3, 0.0, seed=0)

# Move away from the symmetric starting point so no gate sits idle.
model = model.with_arrays({name: rng.normal(0, 0.5, a.shape) for name, a in model.named_arrays()})

# Two windows of three events, as integer indices (window_size, batch).
windows = rng.integers(0, 5, size=(3, 2))
targets = rng.integers(0, 5, size=2)

errors = nn.gradient_check(model, windows, targets, eps=1e-5)
for name, err in errors.items():
    print(f"{name:12s} relative error {err:.2e}")
print("worst:", f"{max(errors.values()):.2e}")

# With every weight and bias at zero, each sigmoid gate outputs 0.5 and the
# candidate is tanh(0) = 0, so the cell state halves and h = 0.5 tanh(c / 2).
zero = nn.LstmCellParams(**{k: np.zeros_like(v) for k, v in vars(model.cell1).items()})
c0 = np.array([1.0, -2.0, 0.5, 3.0])
state = nn.lstm_step(zero, np.eye(5)[2], nn.LstmState(h=np.zeros(4), c=c0))
print("cell state:", state.c, "expected", 0.5 * c0)
print("hidden    :", state.h, "expected", 0.5 * np.tanh(0.5 * c0))
