"""ROC curves from anomaly scores, and why ties count one half.

The area under the curve equals the probability that a randomly chosen
red-team event scores higher than a randomly chosen normal one.
"""

from __future__ import annotations

import numpy as np

from authlstm.evaluate import confusion, roc, sensitivity, specificity

scores = [0.95, 0.90, 0.90, 0.40, 0.30, 0.30, 0.10]
labels = [True, True, False, False, True, False, False]

curve = roc(scores, labels)
print("threshold   fpr    tpr")
for t, (fpr, tpr) in zip(curve.thresholds, curve.points):
    print(f"{t:9.2f}  {fpr:.3f}  {tpr:.3f}")
print("AUC:", curve.auc)

# the same number by counting pairs
pos = [s for s, y in zip(scores, labels) if y]
neg = [s for s, y in zip(scores, labels) if not y]
pairs = sum(1.0 if p > n else 0.5 if p == n else 0.0 for p in pos for n in neg)
print("pairwise:", pairs / (len(pos) * len(neg)))

cm = confusion(scores, labels, threshold=0.5)
print("at 0.5:", cm, "sensitivity", sensitivity(cm), "specificity", round(specificity(cm), 3))

# a scorer that knows nothing lands near 0.5
rng = np.random.default_rng(0)
print("random scores:", round(roc(rng.random(10_000), rng.random(10_000) < 0.2).auc, 3))
