"""Event-log ingestion, chronological ordering, and vocabulary construction.

The on-disk event log is a UTF-8 TSV with one event per line:

    record_id <TAB> day <TAB> channel <TAB> code

``day`` is an integer day offset from an arbitrary epoch. ``channel`` is one
of ``diagnosis``, ``lab``, ``medication`` and must match the code's channel
prefix (``dx:``, ``lab:``, ``med:``). Lines starting with ``#`` are metadata
comments and are skipped.

Events within the same day carry no intrinsic order, so ingestion applies a
seeded shuffle per (record_id, day) group. Seeding per group means that
truncating a record never perturbs the ordering of earlier days.
"""

from __future__ import annotations

import hashlib
import os
from dataclasses import dataclass, field

import numpy as np

from .errors import DataError, MissingInputError, ParseError

CHANNELS = ("diagnosis", "lab", "medication")

CHANNEL_PREFIX = {
    "diagnosis": "dx",
    "lab": "lab",
    "medication": "med",
}

DEFAULT_MIN_COUNT = 250

FINGERPRINT_COMMENT = "# seqvec-fingerprint: "


@dataclass(frozen=True, slots=True)
class Event:
    record_id: str
    day: int
    channel: str
    code: str


@dataclass(slots=True)
class Record:
    record_id: str
    events: list[Event]

    def __len__(self) -> int:
        return len(self.events)

    def codes(self) -> list[str]:
        return [e.code for e in self.events]

    def first_day(self) -> int:
        return self.events[0].day if self.events else 0

    def last_day(self) -> int:
        return self.events[-1].day if self.events else 0


def _check_event(record_id: str, day: int, channel: str, code: str) -> None:
    if day < 0:
        raise ValueError(f"negative day {day}")
    if not code:
        raise ValueError("empty code")
    if channel not in CHANNEL_PREFIX:
        raise ValueError(f"unknown channel {channel!r}")
    prefix = CHANNEL_PREFIX[channel] + ":"
    if not code.startswith(prefix):
        raise ValueError(f"code {code!r} does not carry the {prefix!r} prefix of channel {channel!r}")


def make_event(record_id: str, day: int, channel: str, code: str) -> Event:
    """Validated Event constructor."""
    _check_event(record_id, day, channel, code)
    return Event(record_id, day, channel, code)


def _group_seed(seed: int, record_id: str, day: int) -> int:
    # Stable across runs and platforms, unlike hash().
    digest = hashlib.blake2b(
        f"{seed}|{record_id}|{day}".encode(), digest_size=8
    ).digest()
    return int.from_bytes(digest, "little")


def _order_events(record_id: str, events: list[Event], seed: int) -> list[Event]:
    # Canonical base order (day, then code) before the seeded same-day
    # permutation makes ordering a pure function of the event multiset and
    # the corpus seed, independent of file line order.
    events = sorted(events, key=lambda e: (e.day, e.code))
    out: list[Event] = []
    i = 0
    n = len(events)
    while i < n:
        j = i
        day = events[i].day
        while j < n and events[j].day == day:
            j += 1
        if j - i > 1:
            rng = np.random.default_rng(_group_seed(seed, record_id, day))
            perm = rng.permutation(j - i)
            out.extend(events[i + p] for p in perm)
        else:
            out.append(events[i])
        i = j
    return out


def parse_event_line(line: str, line_no: int, path=None) -> Event:
    parts = line.rstrip("\n").split("\t")
    if len(parts) != 4:
        raise ParseError(f"expected 4 tab-separated fields, got {len(parts)}", line_no, path)
    record_id, day_s, channel, code = parts
    try:
        day = int(day_s)
    except ValueError:
        raise ParseError(f"day {day_s!r} is not an integer", line_no, path) from None
    try:
        return make_event(record_id, day, channel, code)
    except ValueError as exc:
        raise ParseError(str(exc), line_no, path) from None


def records_from_events(events, seed: int) -> list[Record]:
    """Group events by record id, order chronologically, shuffle within days."""
    by_record: dict[str, list[Event]] = {}
    for ev in events:
        by_record.setdefault(ev.record_id, []).append(ev)
    return [
        Record(rid, _order_events(rid, evs, seed))
        for rid, evs in sorted(by_record.items())
    ]


def read_fingerprint(path) -> str | None:
    """Return the fingerprint comment embedded in a TSV artifact, if any."""
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            if not line.startswith("#"):
                return None
            if line.startswith(FINGERPRINT_COMMENT):
                return line[len(FINGERPRINT_COMMENT):].strip()
    return None


def ingest(path, seed: int) -> list[Record]:
    """Read an event-log TSV into chronologically ordered records.

    Returns one Record per distinct record_id, sorted by record_id. Re-running
    with the same seed over the same file is bit-identical. An empty file
    yields an empty corpus.
    """
    if not os.path.exists(path):
        raise MissingInputError(f"event log not found: {path}")
    events: list[Event] = []
    with open(path, encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            if not line.strip() or line.startswith("#"):
                continue
            events.append(parse_event_line(line, line_no, path))
    return records_from_events(events, seed)


def truncate(record: Record, cutoff_day: int) -> Record:
    """Keep only events strictly before cutoff_day, preserving order."""
    if cutoff_day < 0:
        raise DataError(f"cutoff_day must be >= 0, got {cutoff_day}")
    return Record(record.record_id, [e for e in record.events if e.day < cutoff_day])


def group_code(code: str, depth: int) -> str:
    """Truncate a hierarchical code to its first ``depth`` dot-separated levels.

    The channel prefix is preserved: group_code("dx:f3.s2.l7", 1) == "dx:f3".
    """
    if depth < 1:
        raise DataError(f"group depth must be >= 1, got {depth}")
    channel, sep, rest = code.partition(":")
    if not sep:
        return code
    return channel + ":" + ".".join(rest.split(".")[:depth])


@dataclass(slots=True)
class Vocabulary:
    """Frequency-filtered token table with a hierarchical grouper.

    Tokens are indexed densely 0..V-1 in descending count order (ties broken
    by code) so frequent tokens get short Huffman paths.
    """

    codes: list[str]
    counts: np.ndarray  # int64, event count per retained token
    min_count: int
    group_depth: int
    index_of: dict[str, int] = field(init=False)
    group_of: dict[str, str] = field(init=False)

    def __post_init__(self):
        self.index_of = {c: i for i, c in enumerate(self.codes)}
        self.group_of = {c: group_code(c, self.group_depth) for c in self.codes}

    def __len__(self) -> int:
        return len(self.codes)

    @property
    def tokens(self) -> list[tuple[str, int]]:
        return list(zip(self.codes, (int(c) for c in self.counts)))

    @property
    def total_events(self) -> int:
        return int(self.counts.sum())

    @property
    def groups(self) -> list[str]:
        return sorted(set(self.group_of.values()))

    def fingerprint(self) -> str:
        h = hashlib.sha256()
        for code, count in zip(self.codes, self.counts):
            h.update(code.encode())
            h.update(int(count).to_bytes(8, "little"))
        return h.hexdigest()


def build_vocab(records, min_count: int = DEFAULT_MIN_COUNT, group_depth: int = 1) -> Vocabulary:
    """Count events across records and drop tokens seen fewer than min_count times."""
    if min_count < 1:
        raise DataError(f"min_count must be >= 1, got {min_count}")
    counts: dict[str, int] = {}
    for rec in records:
        for ev in rec.events:
            counts[ev.code] = counts.get(ev.code, 0) + 1
    kept = [(code, n) for code, n in counts.items() if n >= min_count]
    kept.sort(key=lambda item: (-item[1], item[0]))
    codes = [code for code, _ in kept]
    arr = np.array([n for _, n in kept], dtype=np.int64)
    return Vocabulary(codes, arr, min_count, group_depth)


def encode(record: Record, vocab: Vocabulary) -> np.ndarray:
    """Map a record to token indices, silently dropping out-of-vocabulary events."""
    index_of = vocab.index_of
    idx = [index_of[e.code] for e in record.events if e.code in index_of]
    return np.asarray(idx, dtype=np.int32)


def write_events_tsv(records, path, fingerprint: str | None = None) -> None:
    """Write records back out in the event-log TSV format."""
    with open(path, "w", encoding="utf-8") as fh:
        if fingerprint is not None:
            fh.write(f"{FINGERPRINT_COMMENT}{fingerprint}\n")
        for rec in records:
            for ev in rec.events:
                fh.write(f"{ev.record_id}\t{ev.day}\t{ev.channel}\t{ev.code}\n")


def write_vocab_tsv(vocab: Vocabulary, path, fingerprint: str | None = None) -> None:
    """Audit export: one line per retained token (code, count, group)."""
    with open(path, "w", encoding="utf-8") as fh:
        if fingerprint is not None:
            fh.write(f"{FINGERPRINT_COMMENT}{fingerprint}\n")
        for code, count in zip(vocab.codes, vocab.counts):
            fh.write(f"{code}\t{int(count)}\t{vocab.group_of[code]}\n")
