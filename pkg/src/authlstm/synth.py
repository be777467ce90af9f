"""Synthetic authentication logs with injected, labelled anomalies.

Each user's normal traffic is a first-order Markov chain over a small set
of (user, src, dst) triples.  Every state ranks its possible successors in
a random order and gives the k-th one probability proportional to
``k ** -transition_concentration``, so larger concentrations make the next
event easier to guess.

Anomalies replace the emitted event while the hidden chain keeps running.
By default they are drawn from a pool of triples whose source computers
never occur in normal traffic.  ``anomaly_burst`` sets the mean length of
a run of consecutive anomalies (1 = isolated replacements); the expected
share of anomalous events stays close to ``anomaly_rate`` either way.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

HIGH_CONCENTRATION = 3.0
ANOMALY_COMPUTER_BASE = 100_000


@dataclass
class SynthSpec:
    users: int = 1
    events_per_user: int = 20_000
    vocab_per_user: int = 50
    transition_concentration: float = HIGH_CONCENTRATION
    anomaly_rate: float = 0.001
    anomaly_vocab: int = 200
    seed: int = 0
    anomaly_burst: float = 1.0
    anomaly_mode: str = "off_support"   # or "rare_transition"
    max_gap_seconds: int = 60

    def __post_init__(self):
        if not 0.0 <= self.anomaly_rate <= 0.1:
            raise ValueError("anomaly_rate must be in [0, 0.1]")
        if self.vocab_per_user < 2:
            raise ValueError("vocab_per_user must be >= 2")
        if self.users < 1 or self.events_per_user < 1 or self.anomaly_vocab < 1:
            raise ValueError("users, events_per_user and anomaly_vocab must be >= 1")
        if self.anomaly_burst < 1.0:
            raise ValueError("anomaly_burst is a mean run length and must be >= 1")
        if self.anomaly_mode not in ("off_support", "rare_transition"):
            raise ValueError(f"unknown anomaly_mode {self.anomaly_mode!r}")


def _user_rng(spec: SynthSpec, user_index: int) -> np.random.Generator:
    return np.random.default_rng([spec.seed, user_index])


def _normal_pairs(rng: np.random.Generator, vocab: int) -> list[tuple[str, str]]:
    pool = max(4, math.isqrt(vocab - 1) + 3)
    codes = rng.choice(pool * pool, size=vocab, replace=False)
    return [(f"C{1 + c // pool}", f"C{1 + c % pool}") for c in codes.tolist()]


def _transitions(rng: np.random.Generator, vocab: int, concentration: float) -> np.ndarray:
    weights = np.arange(1, vocab + 1, dtype=float) ** -concentration
    weights /= weights.sum()
    P = np.empty((vocab, vocab))
    for s in range(vocab):
        P[s, rng.permutation(vocab)] = weights
    return P


def user_model(spec: SynthSpec, user_index: int):
    """(normal (src, dst) pairs, transition matrix, anomaly pairs) for one user."""
    rng = _user_rng(spec, user_index)
    pairs = _normal_pairs(rng, spec.vocab_per_user)
    P = _transitions(rng, spec.vocab_per_user, spec.transition_concentration)
    normal_hosts = sorted({int(h[1:]) for pair in pairs for h in pair})
    dst = rng.choice(normal_hosts, size=spec.anomaly_vocab)
    anomalies = [(f"C{ANOMALY_COMPUTER_BASE + k}", f"C{d}") for k, d in enumerate(dst.tolist())]
    return pairs, P, anomalies, rng


def optimal_accuracy(P: np.ndarray) -> float:
    """Top-1 accuracy of the ideal next-event predictor under the stationary distribution."""
    vals, vecs = np.linalg.eig(P.T)
    pi = np.real(vecs[:, np.argmin(np.abs(vals - 1.0))])
    pi /= pi.sum()
    return float(pi @ P.max(axis=1))


def generate_user(spec: SynthSpec, user_index: int) -> tuple[list[tuple[int, str, str, str]], list[bool]]:
    """Events ``(seconds, user, src, dst)`` for one user plus their anomaly flags."""
    pairs, P, anomalies, rng = user_model(spec, user_index)
    n, V = spec.events_per_user, spec.vocab_per_user
    user = f"U{user_index}"
    cum = np.cumsum(P, axis=1)
    cum[:, -1] = 1.0
    u_next = rng.random(n)
    u_anom = rng.random(n)
    gaps = 1 + rng.integers(0, spec.max_gap_seconds, size=n)
    seconds = int(rng.integers(0, 3600)) + np.cumsum(gaps)
    burst_start = spec.anomaly_rate / spec.anomaly_burst
    state = int(rng.integers(V))
    remaining = 0
    events, flags = [], []
    for k in range(n):
        if k:
            state = int(np.searchsorted(cum[state], u_next[k], side="right"))
        if remaining == 0 and u_anom[k] < burst_start:
            remaining = int(rng.geometric(1.0 / spec.anomaly_burst))
        if remaining:
            remaining -= 1
            if spec.anomaly_mode == "off_support":
                src, dst = anomalies[int(rng.integers(spec.anomaly_vocab))]
            else:
                prev = state if k == 0 else prev_state
                src, dst = pairs[int(np.argmin(P[prev]))]
            flags.append(True)
        else:
            src, dst = pairs[state]
            flags.append(False)
        events.append((int(seconds[k]), user, src, dst))
        prev_state = state
    return events, flags


def generate(spec: SynthSpec) -> tuple[str, str]:
    """Auth CSV text and red-team CSV text, both in ``seconds,user,src,dst`` form."""
    rows = []
    for u in range(spec.users):
        events, flags = generate_user(spec, u)
        rows.extend((ev[0], u, k, ev, flag) for k, (ev, flag) in enumerate(zip(events, flags)))
    rows.sort(key=lambda r: r[:3])
    auth = "".join(f"{s},{user},{src},{dst}\n" for _, _, _, (s, user, src, dst), _ in rows)
    red = "".join(f"{s},{user},{src},{dst}\n" for _, _, _, (s, user, src, dst), flag in rows if flag)
    return auth, red


def write_synth(spec: SynthSpec, out_dir) -> tuple[Path, Path]:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    auth, red = generate(spec)
    auth_path, red_path = out_dir / "auth.csv", out_dir / "redteam.csv"
    auth_path.write_text(auth)
    red_path.write_text(red)
    return auth_path, red_path
