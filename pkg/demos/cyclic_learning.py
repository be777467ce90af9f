"""Training on a perfectly predictable sequence.

The events 0,1,2,3 repeat forever.  A working model must learn to predict
the next one every time; the trace shows cost and accuracy per batch.
"""

from __future__ import annotations

from datetime import datetime, timedelta, timezone

import numpy as np

from authlstm.dataset import WindowBatch
from authlstm.detect import predict_all, segment_quadrants
from authlstm.encode import EncodedSequence, EventDictionary, EventKey
from authlstm.train import TrainingConfig, batch_accuracy, train_user

start = datetime(2018, 1, 1, tzinfo=timezone.utc)
seq = EncodedSequence(
    user="U1",
    indices=np.arange(500) % 4,
    labels=np.zeros(500, dtype=bool),
    timestamps=[start + timedelta(minutes=k) for k in range(500)],
)
dictionary = EventDictionary()
for k in range(4):
    dictionary.add(EventKey("U1", f"C{k}", "C0"))

config = TrainingConfig(epochs=60, batch_size=64, learning_rate=0.1, window_size=8, hidden_size=16)
model, split, trace = train_user(seq, dictionary, config)

for epoch in (0, 9, 19, 39, 59):
    print(f"epoch {epoch + 1:3d}: mean cost {trace.epoch_mean_cost(epoch):.4f}")
print("last batch accuracy:", trace.last_batch_accuracy)
print("held-out accuracy  :", batch_accuracy(model, WindowBatch(split.test, 4)))

records = predict_all(model, split.test, seq.timestamps)
report = segment_quadrants(records)
print("quadrants:", report.counts)
print("largest anomaly score:", max(r.anomaly_score for r in records))
