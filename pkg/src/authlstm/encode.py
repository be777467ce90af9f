"""Dictionarizing: map each distinct (user, src, dst) event to a dense index."""

from __future__ import annotations

import csv
import hashlib
import json
from dataclasses import dataclass, field
from datetime import datetime
from pathlib import Path
from typing import Iterable, NamedTuple, Sequence

import numpy as np

from .ingest import AuthEvent


class EncodingError(KeyError):
    """An event is missing from the dictionary it is being encoded with."""


class EventKey(NamedTuple):
    user: str
    src: str
    dst: str

    def label(self) -> str:
        return f"{self.user}-{self.src}-{self.dst}"


@dataclass
class EventDictionary:
    """Bijection between event keys and indices ``0..vocabulary_size-1``, with counts."""

    index_of: dict[EventKey, int] = field(default_factory=dict)
    key_of: list[EventKey] = field(default_factory=list)
    frequency: list[int] = field(default_factory=list)

    @property
    def vocabulary_size(self) -> int:
        return len(self.key_of)

    def add(self, key: EventKey) -> int:
        idx = self.index_of.get(key)
        if idx is None:
            idx = len(self.key_of)
            self.index_of[key] = idx
            self.key_of.append(key)
            self.frequency.append(0)
        self.frequency[idx] += 1
        return idx

    def to_records(self) -> list[dict]:
        return [
            {"index": i, "user": k.user, "src": k.src, "dst": k.dst, "frequency": self.frequency[i]}
            for i, k in enumerate(self.key_of)
        ]

    @classmethod
    def from_records(cls, records: Sequence[dict]) -> "EventDictionary":
        d = cls()
        for expected, rec in enumerate(sorted(records, key=lambda r: r["index"])):
            if rec["index"] != expected:
                raise ValueError(f"dictionary indices have a gap at {expected}")
            key = EventKey(rec["user"], rec["src"], rec["dst"])
            if key in d.index_of:
                raise ValueError(f"duplicate dictionary entry {key.label()}")
            d.index_of[key] = expected
            d.key_of.append(key)
            d.frequency.append(int(rec["frequency"]))
        return d

    def checksum(self) -> str:
        """SHA-256 over the canonical JSON form; pairs models with dictionaries."""
        blob = json.dumps(self.to_records(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()


@dataclass
class EncodedSequence:
    user: str
    indices: np.ndarray          # int64
    labels: np.ndarray           # bool, red-team flags
    timestamps: list[datetime]

    def __len__(self) -> int:
        return len(self.indices)


def event_key(ev: AuthEvent) -> EventKey:
    return EventKey(ev.user, ev.src, ev.dst)


def build_dictionary(events: Iterable[AuthEvent]) -> EventDictionary:
    """Indices in order of first appearance; repeats reuse their index."""
    d = EventDictionary()
    user = None
    for ev in events:
        if user is None:
            user = ev.user
        elif ev.user != user:
            raise ValueError(f"dictionary spans users {user} and {ev.user}")
        d.add(event_key(ev))
    return d


def encode_sequence(events: Sequence[AuthEvent], dictionary: EventDictionary) -> EncodedSequence:
    idx = np.empty(len(events), dtype=np.int64)
    for n, ev in enumerate(events):
        try:
            idx[n] = dictionary.index_of[event_key(ev)]
        except KeyError:
            raise EncodingError(f"event {event_key(ev).label()} is not in the dictionary") from None
    return EncodedSequence(
        user=events[0].user if len(events) else "",
        indices=idx,
        labels=np.array([ev.is_red_team for ev in events], dtype=bool),
        timestamps=[ev.timestamp for ev in events],
    )


def vocab_report(dictionary: EventDictionary) -> tuple[int, int]:
    """(vocabulary size, highest event frequency)."""
    return dictionary.vocabulary_size, max(dictionary.frequency, default=0)


# -- files ------------------------------------------------------------------------

def dict_path(directory, user: str) -> Path:
    return Path(directory) / f"{user}.dict.json"


def encoded_path(directory, user: str) -> Path:
    return Path(directory) / f"{user}.encoded.csv"


def save_dictionary(dictionary: EventDictionary, path) -> None:
    Path(path).write_text(json.dumps(dictionary.to_records(), indent=1) + "\n")


def load_dictionary(path) -> EventDictionary:
    return EventDictionary.from_records(json.loads(Path(path).read_text()))


def save_encoded(seq: EncodedSequence, path) -> None:
    with open(path, "w", newline="") as fh:
        for ts, i, lab in zip(seq.timestamps, seq.indices.tolist(), seq.labels.tolist()):
            fh.write(f"{ts.isoformat()},{i},{int(lab)}\n")


def load_encoded(path, user: str) -> EncodedSequence:
    ts, idx, lab = [], [], []
    with open(path, newline="") as fh:
        for row in csv.reader(fh):
            ts.append(datetime.fromisoformat(row[0]))
            idx.append(int(row[1]))
            lab.append(row[2] == "1")
    return EncodedSequence(user, np.array(idx, dtype=np.int64), np.array(lab, dtype=bool), ts)
