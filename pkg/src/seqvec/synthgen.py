"""Seeded synthetic longitudinal records with latent disease programs.

Every record runs one or more background programs from day 0. Positive
records additionally run the designated target program from a sampled onset
day: a burst of correlated family tokens (labs, medications, diagnoses)
whose first designated marker code plays the role of the recorded diagnosis.

Codes are hierarchical ("dx:f3.s1.l2" = channel dx, family 3, subfamily 1,
leaf 2) so the vocabulary grouper has real structure to truncate.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .corpus import CHANNEL_PREFIX, Event, Record, records_from_events
from .errors import ConfigError

# Rough channel mix for the synthetic vocabulary (dx / lab / med).
_CHANNEL_WEIGHTS = {"diagnosis": 0.35, "lab": 0.45, "medication": 0.20}

DEFAULT_TARGET_MARKER = "dx:f9.s0.l0"


@dataclass(slots=True)
class ProgramSpec:
    """One latent event-generating process.

    ``onset_range`` is the inclusive day range the program's start is drawn
    from; background programs use (0, 0). ``rate`` is the Poisson mean of
    events per active day. ``deferred_codes`` stay silent until the program
    has been active for ``deferral_days`` (the recorded-diagnosis lag).
    """

    program_id: str
    codes: list[str]
    probs: np.ndarray
    rate: float
    onset_range: tuple[int, int] = (0, 0)
    deferred_codes: tuple = ()
    deferral_days: int = 0

    def __post_init__(self):
        self.probs = np.asarray(self.probs, dtype=np.float64)
        if self.rate < 0:
            raise ConfigError(f"program {self.program_id!r}: rate must be >= 0")
        if len(self.codes) != len(self.probs):
            raise ConfigError(f"program {self.program_id!r}: codes/probs length mismatch")
        total = float(self.probs.sum())
        if abs(total - 1.0) > 1e-9:
            raise ConfigError(f"program {self.program_id!r}: probabilities sum to {total}, not 1")
        if self.onset_range[0] > self.onset_range[1] or self.onset_range[0] < 0:
            raise ConfigError(f"program {self.program_id!r}: bad onset range {self.onset_range}")
        if self.deferral_days < 0:
            raise ConfigError(f"program {self.program_id!r}: deferral_days must be >= 0")
        unknown = set(self.deferred_codes) - set(self.codes)
        if unknown:
            raise ConfigError(f"program {self.program_id!r}: deferred codes not in "
                              f"the distribution: {sorted(unknown)}")


@dataclass(slots=True)
class GeneratedCohort:
    records: list[Record]
    labels: dict[str, bool]
    event_day: dict[str, int]  # target-program onset, positives only
    seed: int
    programs: list[ProgramSpec] = field(default_factory=list)
    target_program: str = ""


def _family_codes(channel: str, family: int, n_sub: int, n_leaf: int) -> list[str]:
    prefix = CHANNEL_PREFIX[channel]
    return [
        f"{prefix}:f{family}.s{s}.l{l}"
        for s in range(n_sub)
        for l in range(n_leaf)
    ]


def _hier_weights(n_sub: int, n_leaf: int) -> np.ndarray:
    # Mass concentrated in early subfamilies/leaves, long tail further out.
    w = np.array(
        [1.0 / ((s + 1.5) * (l + 1.2) ** 1.5) for s in range(n_sub) for l in range(n_leaf)]
    )
    return w


def default_programs(n_families: int = 9, n_sub: int = 3, n_leaf: int = 4,
                     background_rate: float = 0.35, target_rate: float = 0.4,
                     onset_range: tuple[int, int] = (250, 700),
                     marker_weight: float = 0.03,
                     marker_deferral_days: int = 75,
                     background_blend: float = 0.6,
                     family_overlap: float = 0.02) -> tuple[list[ProgramSpec], str]:
    """Standard two-program set: broad background plus one disease family.

    The disease program owns family ``n_families`` across all channels, but
    ``background_blend`` of its emissions follow the background distribution
    (sick records still accumulate generic events). The background in turn
    spends ``family_overlap`` of its mass on non-marker disease-family codes
    (rule-out workups in healthy records), so the classes genuinely overlap.
    The designated marker code (first dx leaf of the family) is the
    recorded-diagnosis analog: never emitted by the background, deferred by
    ``marker_deferral_days`` after onset (diagnosis lag), then its first
    emission trails by a further ~1 / (rate * share * marker_weight) days.
    """
    if not (0.0 <= background_blend < 1.0):
        raise ConfigError(f"background_blend must be in [0, 1), got {background_blend}")
    if not (0.0 <= family_overlap < 1.0):
        raise ConfigError(f"family_overlap must be in [0, 1), got {family_overlap}")
    fam = n_families  # families 0..n_families-1 are generic, this one is the disease's
    marker = f"dx:f{fam}.s0.l0"

    fam_codes: list[str] = []
    fam_weights: list[float] = []
    for channel, cw in _CHANNEL_WEIGHTS.items():
        codes = _family_codes(channel, fam, n_sub, n_leaf)
        w = _hier_weights(n_sub, n_leaf) * cw
        fam_codes.extend(codes)
        fam_weights.extend(w)
    fam_probs = np.asarray(fam_weights)
    midx = fam_codes.index(marker)

    generic_codes: list[str] = []
    generic_weights: list[float] = []
    for channel, cw in _CHANNEL_WEIGHTS.items():
        for family in range(n_families):
            codes = _family_codes(channel, family, n_sub, n_leaf)
            w = _hier_weights(n_sub, n_leaf) * cw / ((family + 2.0) ** 1.1)
            generic_codes.extend(codes)
            generic_weights.extend(w)
    generic_probs = np.asarray(generic_weights)
    generic_probs /= generic_probs.sum()

    # background: generic mass plus a sliver of non-marker disease-family codes
    overlap_probs = fam_probs.copy()
    overlap_probs[midx] = 0.0
    overlap_probs /= overlap_probs.sum()
    bg_codes = generic_codes + fam_codes
    bg_probs = np.concatenate([(1.0 - family_overlap) * generic_probs,
                               family_overlap * overlap_probs])
    background = ProgramSpec("background", bg_codes, bg_probs, background_rate)

    disease_fam = fam_probs.copy()
    disease_fam[midx] = 0.0
    disease_fam *= (1.0 - marker_weight) / disease_fam.sum()
    disease_fam[midx] = marker_weight
    t_codes = generic_codes + fam_codes
    t_probs = np.concatenate([background_blend * generic_probs,
                              (1.0 - background_blend) * disease_fam])
    target = ProgramSpec("disease", t_codes, t_probs, target_rate, onset_range,
                         deferred_codes=(marker,),
                         deferral_days=marker_deferral_days)
    return [background, target], "disease"


def _emit(rid: str, rng: np.random.Generator, codes, probs, rate: float,
          start: int, end: int) -> list[Event]:
    if end <= start or rate == 0.0:
        return []
    n = rng.poisson(rate * (end - start))
    if n == 0:
        return []
    days = rng.integers(start, end, size=n)
    drawn = rng.choice(len(codes), size=n, p=probs)
    out = []
    for day, ci in zip(days, drawn):
        code = codes[ci]
        channel = {"dx": "diagnosis", "lab": "lab", "med": "medication"}[code.partition(":")[0]]
        out.append(Event(rid, int(day), channel, code))
    return out


def _record_events(rid: str, rng: np.random.Generator, program: ProgramSpec,
                   start: int, end: int) -> list[Event]:
    if not program.deferred_codes or program.deferral_days == 0:
        return _emit(rid, rng, program.codes, program.probs, program.rate, start, end)
    # quiet phase: deferred codes masked out, remaining mass renormalized
    split = min(end, start + program.deferral_days)
    deferred = np.isin(np.asarray(program.codes, dtype=object),
                       np.asarray(program.deferred_codes, dtype=object))
    quiet = program.probs.copy()
    quiet[deferred] = 0.0
    mass = quiet.sum()
    events: list[Event] = []
    if mass > 0.0:
        events += _emit(rid, rng, program.codes, quiet / mass,
                        program.rate * mass, start, split)
    events += _emit(rid, rng, program.codes, program.probs, program.rate, split, end)
    return events


def generate(programs: list[ProgramSpec], n_records: int,
             history_length_days: int, target_program: str, seed: int,
             positive_fraction: float = 0.5, min_span_days: int | None = None,
             min_post_onset_days: int = 60) -> GeneratedCohort:
    """Sample a labeled cohort; fully determined by ``seed``.

    Each record spans a uniform number of days up to history_length_days.
    Positive records (an exact ``positive_fraction`` share, assigned by a
    seeded permutation) activate the target program from its sampled onset;
    spans stretch when needed so the onset stays inside the history.
    """
    targets = [p for p in programs if p.program_id == target_program]
    if len(targets) != 1:
        raise ConfigError(
            f"exactly one program must be named {target_program!r}, found {len(targets)}"
        )
    target = targets[0]
    background = [p for p in programs if p.program_id != target_program]
    if not background:
        raise ConfigError("at least one background program is required")
    if not (0.0 <= positive_fraction <= 1.0):
        raise ConfigError(f"positive_fraction must be in [0, 1], got {positive_fraction}")
    if min_span_days is None:
        min_span_days = max(1, history_length_days // 3)
    if min_span_days > history_length_days:
        raise ConfigError("min_span_days exceeds history_length_days")

    n_pos = int(round(n_records * positive_fraction))
    perm = np.random.default_rng(np.random.SeedSequence([seed, 0x1AB])).permutation(n_records)
    positive_idx = set(int(i) for i in perm[:n_pos])

    events: list[Event] = []
    labels: dict[str, bool] = {}
    event_day: dict[str, int] = {}
    width = max(6, len(str(n_records - 1)))
    for idx in range(n_records):
        rid = f"r{idx:0{width}d}"
        rng = np.random.default_rng(np.random.SeedSequence([seed, 0x5EC, idx]))
        span = int(rng.integers(min_span_days, history_length_days + 1))
        positive = idx in positive_idx
        onset = None
        if positive:
            lo, hi = target.onset_range
            onset = int(rng.integers(lo, hi + 1))
            span = max(span, min(history_length_days, onset + min_post_onset_days))
            if onset >= span:  # degenerate range near the history end
                onset = max(0, span - min_post_onset_days)
        for prog in background:
            p_lo, p_hi = prog.onset_range
            p_start = int(rng.integers(p_lo, p_hi + 1)) if p_hi > p_lo else p_lo
            events.extend(_record_events(rid, rng, prog, p_start, span))
        if positive:
            events.extend(_record_events(rid, rng, target, onset, span))
            event_day[rid] = onset
        labels[rid] = positive

    records = records_from_events(events, seed)
    # records_from_events drops records with no events; keep labels aligned
    present = {r.record_id for r in records}
    labels = {rid: lab for rid, lab in labels.items() if rid in present}
    event_day = {rid: d for rid, d in event_day.items() if rid in present}
    return GeneratedCohort(records, labels, event_day, seed,
                           list(programs), target_program)


def write_labels_tsv(cohort: GeneratedCohort, path, fingerprint: str | None = None) -> None:
    """Labels export: record_id, positive|negative, onset day (-1 for negatives)."""
    with open(path, "w", encoding="utf-8") as fh:
        if fingerprint is not None:
            fh.write(f"# seqvec-fingerprint: {fingerprint}\n")
        for rec in cohort.records:
            rid = rec.record_id
            label = "positive" if cohort.labels[rid] else "negative"
            day = cohort.event_day.get(rid, -1)
            fh.write(f"{rid}\t{label}\t{day}\n")


def read_labels_tsv(path) -> tuple[dict[str, bool], dict[str, int]]:
    from .errors import ParseError

    labels: dict[str, bool] = {}
    event_day: dict[str, int] = {}
    with open(path, encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            if line.startswith("#") or not line.strip():
                continue
            parts = line.rstrip("\n").split("\t")
            if len(parts) != 3 or parts[1] not in ("positive", "negative"):
                raise ParseError("expected record_id<TAB>positive|negative<TAB>day",
                                 line_no, path)
            rid, label, day_s = parts
            try:
                day = int(day_s)
            except ValueError:
                raise ParseError(f"event day {day_s!r} is not an integer",
                                 line_no, path) from None
            labels[rid] = label == "positive"
            if labels[rid]:
                event_day[rid] = day
    return labels, event_day
