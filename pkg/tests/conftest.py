from __future__ import annotations

from datetime import datetime, timedelta, timezone

import numpy as np
import pytest

from authlstm.encode import EncodedSequence
from authlstm.ingest import AuthEvent

BASE = datetime(2018, 1, 1, tzinfo=timezone.utc)


def make_events(triples, user="U1", red=()):
    """AuthEvents one second apart from (src, dst) pairs; ``red`` holds flagged positions."""
    red = set(red)
    return [AuthEvent(BASE + timedelta(seconds=k), user, s, d, k in red)
            for k, (s, d) in enumerate(triples)]


def make_sequence(indices, labels=None, user="U1") -> EncodedSequence:
    idx = np.asarray(indices, dtype=np.int64)
    lab = np.zeros(len(idx), dtype=bool) if labels is None else np.asarray(labels, dtype=bool)
    return EncodedSequence(user, idx, lab, [BASE + timedelta(seconds=k) for k in range(len(idx))])


def cyclic_sequence(n=500, period=4, user="U1") -> EncodedSequence:
    return make_sequence(np.arange(n) % period, user=user)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def pytest_terminal_summary(terminalreporter):
    """Echo the acceptance verdicts (one line per criterion) after the run."""
    import sys

    module = sys.modules.get("test_acceptance")
    lines = getattr(module, "VERDICTS", None)
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines, key=lambda s: int(s.split()[2].rstrip(":"))):
            terminalreporter.write_line(line)
