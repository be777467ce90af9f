"""Streaming ingestion of authentication logs.

The canonical input is a headerless CSV with one ``seconds,user,src,dst``
record per line.  Lines are parsed one at a time, so memory use does not
grow with the size of the file; only the per-user partitions that are
explicitly requested are held in memory.
"""

from __future__ import annotations

import csv
import io
import logging
import os
import re
from collections import Counter, defaultdict
from dataclasses import dataclass, field
from datetime import datetime, timedelta, timezone
from pathlib import Path
from typing import BinaryIO, Iterable, Iterator, NamedTuple

logger = logging.getLogger(__name__)

DEFAULT_BASE_DATE = datetime(2018, 1, 1, tzinfo=timezone.utc)
FORMAT_CHECK_LINES = 1000

_RECORD = re.compile(rb"(\d+),(U\d+),(C\d+),(C\d+)\r?\n?")
_USER = re.compile(r"U\d+")
_COMPUTER = re.compile(r"C\d+")


class FormatError(ValueError):
    """The input does not look like an authentication log at all."""


class RawRecord(NamedTuple):
    seconds: int
    user: str
    src: str
    dst: str


class AuthEvent(NamedTuple):
    timestamp: datetime
    user: str
    src: str
    dst: str
    is_red_team: bool = False

    @property
    def key(self) -> tuple[str, str, str]:
        return (self.user, self.src, self.dst)


@dataclass
class IngestConfig:
    lanl_full: bool = False
    base_date: datetime = DEFAULT_BASE_DATE


@dataclass
class IngestStats:
    total_rows: int = 0
    dropped_rows: int = 0
    users_seen: int = 0
    red_team_rows: int = 0
    per_user_counts: Counter = field(default_factory=Counter)

    @property
    def kept_rows(self) -> int:
        return self.total_rows - self.dropped_rows

    def to_dict(self) -> dict:
        return {
            "total_rows": self.total_rows,
            "dropped_rows": self.dropped_rows,
            "users_seen": self.users_seen,
            "red_team_rows": self.red_team_rows,
            "per_user_counts": dict(sorted(self.per_user_counts.items())),
        }


def _open_binary(source) -> tuple[BinaryIO, bool]:
    if isinstance(source, (str, os.PathLike)):
        return open(source, "rb"), True
    return source, False


def _parse_lanl_full(line: bytes) -> tuple[RawRecord | None, bool]:
    """Map a 9-field LANL auth row; returns (record, structurally_valid)."""
    parts = line.rstrip(b"\r\n").split(b",")
    if len(parts) != 9 or not parts[0].isdigit():
        return None, False
    try:
        user = parts[1].decode("ascii").split("@", 1)[0]
        src = parts[3].decode("ascii")
        dst = parts[4].decode("ascii")
    except UnicodeDecodeError:
        return None, False
    if not (_USER.fullmatch(user) and _COMPUTER.fullmatch(src) and _COMPUTER.fullmatch(dst)):
        # computer accounts, ANONYMOUS LOGON, '?' hosts: well-formed but not user events
        return None, True
    return RawRecord(int(parts[0]), user, src, dst), True


def parse_auth_stream(source, config: IngestConfig | None = None,
                      stats: IngestStats | None = None) -> Iterator[RawRecord]:
    """Yield one :class:`RawRecord` per well-formed line of ``source``.

    ``source`` is a path or a binary file object.  Malformed lines are
    dropped and counted in ``stats``.  If more than half of the first
    1000 lines are malformed the input is rejected with :class:`FormatError`.
    """
    config = config or IngestConfig()
    stats = stats if stats is not None else IngestStats()
    fh, owned = _open_binary(source)
    users = stats.per_user_counts
    malformed_head = 0
    try:
        for n, line in enumerate(fh, 1):
            stats.total_rows += 1
            if config.lanl_full:
                rec, structural = _parse_lanl_full(line)
            else:
                m = _RECORD.fullmatch(line)
                if m is None:
                    rec, structural = None, False
                else:
                    s, u, a, b = m.groups()
                    rec, structural = RawRecord(int(s), u.decode(), a.decode(), b.decode()), True
            if rec is None:
                stats.dropped_rows += 1
                if not structural and n <= FORMAT_CHECK_LINES:
                    malformed_head += 1
            else:
                if rec.user not in users:
                    stats.users_seen += 1
                users[rec.user] += 1
            if n == FORMAT_CHECK_LINES and malformed_head * 2 > FORMAT_CHECK_LINES:
                raise FormatError(
                    f"{malformed_head} of the first {FORMAT_CHECK_LINES} lines are malformed; "
                    "is this an authentication log (try --lanl-full)?")
            if rec is not None:
                yield rec
    finally:
        if owned:
            fh.close()


def read_red_team(source) -> tuple[set[RawRecord], int]:
    """Load the red-team file into a set of exact 4-tuples.

    ``user@DOMAIN`` names are reduced to the bare user, so the official
    LANL red-team file can be used directly.  Returns (set, dropped lines).
    """
    fh, owned = _open_binary(source)
    red: set[RawRecord] = set()
    dropped = 0
    try:
        for line in fh:
            parts = line.strip().split(b",")
            if len(parts) == 4:
                parts[1] = parts[1].split(b"@", 1)[0]
                m = _RECORD.fullmatch(b",".join(parts))
                if m is not None:
                    s, u, a, b = m.groups()
                    red.add(RawRecord(int(s), u.decode(), a.decode(), b.decode()))
                    continue
            if line.strip():
                dropped += 1
    finally:
        if owned:
            fh.close()
    if dropped:
        logger.warning("dropped %d malformed red-team lines", dropped)
    return red, dropped


def join_ground_truth(records: Iterable[RawRecord], red_team) -> Iterator[tuple[RawRecord, bool]]:
    """Flag each record whose exact (seconds, user, src, dst) is a red-team record.

    ``red_team`` is either a set from :func:`read_red_team` or anything
    :func:`read_red_team` accepts.
    """
    red = red_team if isinstance(red_team, (set, frozenset)) else read_red_team(red_team)[0]
    for rec in records:
        yield rec, rec in red


def assign_absolute_time(record: RawRecord, base_date: datetime = DEFAULT_BASE_DATE,
                         is_red_team: bool = False) -> AuthEvent:
    return AuthEvent(base_date + timedelta(seconds=record.seconds), record.user, record.src,
                     record.dst, is_red_team)


def volume_histogram(records: Iterable[RawRecord], bucket: int | timedelta) -> list[tuple[int, int]]:
    """Record counts per time bucket as ``(bucket_start_seconds, count)``, in time order.

    An analyst aid for picking the base date; empty buckets are omitted.
    """
    if isinstance(bucket, timedelta):
        bucket = int(bucket.total_seconds())
    if bucket <= 0:
        raise ValueError("bucket must be positive")
    counts = Counter(rec.seconds // bucket for rec in records)
    return [(k * bucket, counts[k]) for k in sorted(counts)]


def partition_by_user(events: Iterable[AuthEvent], users: Iterable[str] | None = None
                      ) -> dict[str, list[AuthEvent]]:
    """Group events per user, each group stably sorted by timestamp.

    With ``users`` only those users are kept (absent ones map to ``[]``).
    """
    wanted = set(users) if users is not None else None
    out: dict[str, list[AuthEvent]] = {u: [] for u in wanted} if wanted is not None else {}
    for ev in events:
        if wanted is not None:
            if ev.user in wanted:
                out[ev.user].append(ev)
        else:
            out.setdefault(ev.user, []).append(ev)
    for seq in out.values():
        seq.sort(key=lambda e: e.timestamp)
    return out


def ingest_events(source, red_team=None, config: IngestConfig | None = None,
                  stats: IngestStats | None = None) -> Iterator[AuthEvent]:
    """parse -> ground-truth join -> absolute time, as one lazy stream."""
    config = config or IngestConfig()
    stats = stats if stats is not None else IngestStats()
    records = parse_auth_stream(source, config, stats)
    red = set() if red_team is None else (
        red_team if isinstance(red_team, (set, frozenset)) else read_red_team(red_team)[0])
    for rec, flag in join_ground_truth(records, red):
        if flag:
            stats.red_team_rows += 1
        yield assign_absolute_time(rec, config.base_date, flag)


# -- per-user event files: iso8601_timestamp,user,src,dst,is_red_team ----------

def events_path(directory, user: str) -> Path:
    return Path(directory) / f"{user}.events.csv"


def format_event(ev: AuthEvent) -> str:
    return f"{ev.timestamp.isoformat()},{ev.user},{ev.src},{ev.dst},{int(ev.is_red_team)}\n"


def parse_event_line(row: list[str]) -> AuthEvent:
    ts, user, src, dst, flag = row
    if flag not in ("0", "1"):
        raise ValueError(f"bad red-team flag {flag!r}")
    return AuthEvent(datetime.fromisoformat(ts), user, src, dst, flag == "1")


def write_events(events: Iterable[AuthEvent], path) -> int:
    n = 0
    with open(path, "w", newline="") as fh:
        for ev in events:
            fh.write(format_event(ev))
            n += 1
    return n


def read_events(path) -> list[AuthEvent]:
    with open(path, newline="") as fh:
        return [parse_event_line(row) for row in csv.reader(fh)]


def partition_to_files(events: Iterable[AuthEvent], out_dir, users: Iterable[str] | None = None,
                       flush_lines: int = 200_000) -> dict[str, int]:
    """Stream events into ``<user>.events.csv`` files without holding the log in memory.

    Lines are buffered and appended in chunks; a user whose events arrive
    out of time order gets its file re-sorted afterwards (that user's
    events only are loaded).  Returns per-user event counts.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    wanted = set(users) if users is not None else None
    counts: Counter = Counter()
    buffers: dict[str, list[str]] = defaultdict(list)
    last_ts: dict[str, datetime] = {}
    unsorted: set[str] = set()
    started: set[str] = set()
    pending = 0
    iso_cache: tuple[datetime | None, str] = (None, "")

    def flush():
        nonlocal pending
        for user, lines in buffers.items():
            mode = "a" if user in started else "w"
            with open(events_path(out_dir, user), mode, newline="") as fh:
                fh.writelines(lines)
            started.add(user)
        buffers.clear()
        pending = 0

    for ev in events:
        if wanted is not None and ev.user not in wanted:
            continue
        if ev.timestamp != iso_cache[0]:
            iso_cache = (ev.timestamp, ev.timestamp.isoformat())
        buffers[ev.user].append(f"{iso_cache[1]},{ev.user},{ev.src},{ev.dst},{int(ev.is_red_team)}\n")
        counts[ev.user] += 1
        prev = last_ts.get(ev.user)
        if prev is not None and ev.timestamp < prev:
            unsorted.add(ev.user)
        else:
            last_ts[ev.user] = ev.timestamp
        pending += 1
        if pending >= flush_lines:
            flush()
    flush()
    for user in (wanted or ()):
        if user not in started:
            events_path(out_dir, user).write_text("")
            counts[user] += 0
    for user in sorted(unsorted):
        path = events_path(out_dir, user)
        evs = read_events(path)
        evs.sort(key=lambda e: e.timestamp)
        write_events(evs, path)
    return dict(counts)


def parse_iso_date(text: str) -> datetime:
    """Parse ``--base-date``; naive values are taken as UTC."""
    dt = datetime.fromisoformat(text.replace("Z", "+00:00"))
    if dt.tzinfo is None:
        dt = dt.replace(tzinfo=timezone.utc)
    return dt


def bytes_source(text: str | bytes) -> io.BytesIO:
    """Wrap literal CSV text as a binary stream (handy in tests and demos)."""
    return io.BytesIO(text.encode() if isinstance(text, str) else text)
