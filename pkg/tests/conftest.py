import numpy as np
import pytest

from seqvec import corpus, synthgen


def make_vocab(counts: dict[str, int], min_count: int = 1, group_depth: int = 1):
    """Vocabulary straight from a count table (descending count, code tiebreak)."""
    items = sorted(counts.items(), key=lambda kv: (-kv[1], kv[0]))
    return corpus.Vocabulary([c for c, _ in items],
                             np.array([n for _, n in items], dtype=np.int64),
                             min_count, group_depth)


def make_record(rid: str, days_codes) -> corpus.Record:
    events = [corpus.make_event(rid, day, _channel_of(code), code)
              for day, code in days_codes]
    return corpus.Record(rid, events)


def _channel_of(code: str) -> str:
    return {"dx": "diagnosis", "lab": "lab", "med": "medication"}[code.partition(":")[0]]


@pytest.fixture(scope="session")
def small_cohort():
    """Shared strong-signal synthetic cohort, sized for fast unit tests."""
    programs, target = synthgen.default_programs()
    return synthgen.generate(programs, 400, 800, target, seed=1301,
                             positive_fraction=0.5, min_span_days=300)


@pytest.fixture(scope="session")
def small_vocab(small_cohort):
    return corpus.build_vocab(small_cohort.records, min_count=30)
