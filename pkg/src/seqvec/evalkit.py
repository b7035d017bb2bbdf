"""Downstream evaluation: cohorts, matching, splits, classifiers, metrics.

Reproduces the evaluation protocol end to end on synthetic data: horizon
tasks with problem-specific cutoff rules, covariate matching of negatives,
stratified train/test/validation splits, grouped bag-of-words and embedded
representations, an elastic-net logistic classifier tuned by cross-validated
AUC, and AUC / calibration reporting. The gradient-boosting comparator is
out of scope; both feature matrices are exported for external classifiers
instead.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .corpus import Record, Vocabulary, encode, truncate
from .embedding import EmbeddingModel
from .errors import ConfigError, DataError, FingerprintError, NumericsError
from .inference import DEFAULT_INFER_EPOCHS, infer

HORIZONS = (1, 30, 91, 182, 365)

DEFAULT_LAMBDAS = tuple(float(x) for x in np.logspace(-4.0, 0.0, 7))
DEFAULT_ALPHAS = (0.2, 0.5, 0.8)


@dataclass(slots=True)
class TaskSpec:
    """One prediction task: what to predict, from when, and how far ahead.

    ``cutoff_code_prefix`` set: a positive's cutoff is its first event whose
    code starts with the prefix (recorded-diagnosis analog); unset: the
    labeled event day is the cutoff. ``selection_code_prefix`` set: only
    records carrying such an event enter the cohort, everyone's cutoff is the
    first such event, and matching is skipped (selection-by-procedure analog).
    """

    name: str
    horizon_days: int
    cutoff_code_prefix: str | None = None
    selection_code_prefix: str | None = None
    match: bool = True
    min_dx_events: int = 10
    min_history_days: int = 730

    def __post_init__(self):
        if self.horizon_days < 1:
            raise ConfigError(f"horizon must be positive, got {self.horizon_days}")


def task_preset(name: str, horizon_days: int, *, target_family: str = "f9",
                min_dx_events: int = 10, min_history_days: int = 180) -> TaskSpec:
    """The three synthetic analogs of the clinical problems.

    dx-onset:   predict disease onset; cutoff = first marker diagnosis code.
    med-start:  predict treatment start; cutoff = first disease-family
                medication code.
    procedure:  biopsy analog; cohort selected by a procedure code, cutoff at
                that code, no matching.
    null:       label-event cutoff; used with a zero-rate target program for
                no-signal control runs.
    """
    presets = {
        "dx-onset": dict(cutoff_code_prefix=f"dx:{target_family}.s0.l0", match=True),
        "med-start": dict(cutoff_code_prefix=f"med:{target_family}", match=True),
        "procedure": dict(selection_code_prefix="dx:f0.s0.l0", match=False),
        "null": dict(cutoff_code_prefix=None, match=True),
    }
    if name not in presets:
        raise ConfigError(f"unknown task preset {name!r}; choose from {sorted(presets)}")
    return TaskSpec(name=name, horizon_days=horizon_days,
                    min_dx_events=min_dx_events, min_history_days=min_history_days,
                    **presets[name])


@dataclass(slots=True)
class CohortInstance:
    record_id: str
    label: int
    cutoff_day: int
    record: Record  # truncated at cutoff - horizon
    input_end: int
    bow: np.ndarray | None = None
    emb: np.ndarray | None = None

    def input_hash(self) -> str:
        h = hashlib.blake2b(digest_size=16)
        for ev in self.record.events:
            h.update(f"{ev.day}|{ev.code}\n".encode())
        return h.hexdigest()

    def dx_count(self) -> int:
        return sum(1 for ev in self.record.events if ev.channel == "diagnosis")

    def history_days(self) -> int:
        """Observed data span of the truncated input, in days."""
        if not self.record.events:
            return 0
        return self.record.last_day() - self.record.first_day() + 1


def _first_day_with_prefix(record: Record, prefix: str) -> int | None:
    for ev in record.events:
        if ev.code.startswith(prefix):
            return ev.day
    return None


def build_cohort(records: list[Record], labels: dict[str, bool],
                 event_day: dict[str, int], task: TaskSpec,
                 corpus_end_day: int | None = None):
    """Assign cutoffs, truncate inputs, and apply the exclusion rules.

    Returns (positives, negatives) as CohortInstance lists. Positive cutoffs
    follow the task's cutoff rule; negative cutoffs sit at the corpus end day
    (the data-pull analog) unless a selection rule pins them.
    """
    if corpus_end_day is None:
        corpus_end_day = max((r.last_day() for r in records if r.events), default=0) + 1
    positives: list[CohortInstance] = []
    negatives: list[CohortInstance] = []
    for rec in records:
        rid = rec.record_id
        if rid not in labels:
            continue
        label = labels[rid]
        if task.selection_code_prefix is not None:
            cutoff = _first_day_with_prefix(rec, task.selection_code_prefix)
            if cutoff is None:
                continue
        elif label:
            if task.cutoff_code_prefix is not None:
                cutoff = _first_day_with_prefix(rec, task.cutoff_code_prefix)
                if cutoff is None:
                    continue  # target never recorded: not a usable positive
            else:
                if rid not in event_day:
                    continue
                cutoff = event_day[rid]
        else:
            cutoff = corpus_end_day
        input_end = cutoff - task.horizon_days
        if input_end <= 0:
            continue
        inst = CohortInstance(rid, int(label), cutoff, truncate(rec, input_end), input_end)
        if inst.dx_count() < task.min_dx_events:
            continue
        if inst.history_days() < task.min_history_days:
            continue
        (positives if label else negatives).append(inst)
    if not positives:
        raise DataError(f"task {task.name!r}: no usable positive instances")
    return positives, negatives


@dataclass(slots=True)
class MatchReport:
    smd_before: dict[str, float]
    smd_after: dict[str, float]
    n_positives: int
    n_negatives_pool: int


_COVARIATES = ("dx_count", "history_days")


def _covariate_matrix(instances) -> np.ndarray:
    return np.array([[inst.dx_count(), inst.history_days()] for inst in instances],
                    dtype=np.float64)


def _smd(pos: np.ndarray, neg: np.ndarray) -> dict[str, float]:
    out = {}
    for j, name in enumerate(_COVARIATES):
        spread = np.sqrt((pos[:, j].var() + neg[:, j].var()) / 2.0)
        if spread == 0.0:
            out[name] = 0.0
        else:
            out[name] = float(abs(pos[:, j].mean() - neg[:, j].mean()) / spread)
    return out


def match_negatives(positives, negatives):
    """Greedy 1:1 nearest-neighbor matching without replacement.

    Distances are Euclidean on z-scored (diagnosis count, history length);
    hardest positives (largest covariate norm) match first.
    """
    if len(negatives) < len(positives):
        raise DataError(
            f"negative pool ({len(negatives)}) smaller than positives ({len(positives)})"
        )
    negatives = sorted(negatives, key=lambda i: i.record_id)
    pos_cov = _covariate_matrix(positives)
    neg_cov = _covariate_matrix(negatives)
    pooled = np.vstack([pos_cov, neg_cov])
    mean = pooled.mean(axis=0)
    std = pooled.std(axis=0)
    std[std == 0.0] = 1.0
    pos_z = (pos_cov - mean) / std
    neg_z = (neg_cov - mean) / std

    order = sorted(range(len(positives)),
                   key=lambda i: (-float(np.linalg.norm(pos_z[i])),
                                  positives[i].record_id))
    available = np.ones(len(negatives), dtype=bool)
    matched: list = [None] * len(positives)
    for i in order:
        d2 = ((neg_z - pos_z[i]) ** 2).sum(axis=1)
        d2[~available] = np.inf
        j = int(np.argmin(d2))
        available[j] = False
        matched[i] = negatives[j]

    report = MatchReport(
        smd_before=_smd(pos_cov, neg_cov),
        smd_after=_smd(pos_cov, _covariate_matrix(matched)),
        n_positives=len(positives),
        n_negatives_pool=len(negatives),
    )
    return matched, report


@dataclass(slots=True)
class Split:
    train: list
    test: list
    validation: list

    def manifest(self) -> dict:
        return {
            "train": [i.record_id for i in self.train],
            "test": [i.record_id for i in self.test],
            "validation": [i.record_id for i in self.validation],
        }


def split(instances, ratios=(0.75, 0.20, 0.05), seed: int = 0) -> Split:
    """Stratified deterministic split; per-label sizes within 1 of exact."""
    if abs(sum(ratios) - 1.0) > 1e-9:
        raise ConfigError(f"split ratios must sum to 1, got {ratios}")
    buckets: dict[int, list] = {}
    for inst in sorted(instances, key=lambda i: i.record_id):
        buckets.setdefault(inst.label, []).append(inst)
    parts: list[list] = [[], [], []]
    for label, items in sorted(buckets.items()):
        n = len(items)
        if n < 3:
            raise DataError(f"label {label} has only {n} instances; need >= 3 to split")
        rng = np.random.default_rng(np.random.SeedSequence([seed, 0x59117, label]))
        order = rng.permutation(n)
        exact = [n * r for r in ratios]
        sizes = [int(np.floor(x)) for x in exact]
        remainder = n - sum(sizes)
        by_frac = sorted(range(3), key=lambda i: (-(exact[i] - sizes[i]), i))
        for i in range(remainder):
            sizes[by_frac[i]] += 1
        start = 0
        for part, size in zip(parts, sizes):
            part.extend(items[int(j)] for j in order[start:start + size])
            start += size
    return Split(*parts)


# --- representations ------------------------------------------------------


def bow_features(record: Record, vocab: Vocabulary) -> np.ndarray:
    """Grouped bag-of-words counts over the vocabulary's group codes."""
    groups = vocab.groups
    index = {g: i for i, g in enumerate(groups)}
    out = np.zeros(len(groups), dtype=np.float64)
    group_of = vocab.group_of
    for ev in record.events:
        g = group_of.get(ev.code)
        if g is not None:
            out[index[g]] += 1.0
    return out


def bow_matrix(instances, vocab: Vocabulary):
    """Stack per-instance grouped counts, dropping all-zero columns."""
    X = np.stack([bow_features(inst.record, vocab) for inst in instances])
    nonzero = X.sum(axis=0) > 0
    names = [g for g, keep in zip(vocab.groups, nonzero) if keep]
    return X[:, nonzero], names


# --- elastic-net logistic regression ---------------------------------------


@dataclass(slots=True)
class LinearModel:
    """Elastic-net logistic model in standardized feature space."""

    weights: np.ndarray
    intercept: float
    lam: float
    alpha: float
    mean: np.ndarray
    std: np.ndarray
    objective: float
    cv_table: list = field(default_factory=list)

    def decision(self, X: np.ndarray) -> np.ndarray:
        Xs = (np.asarray(X, dtype=np.float64) - self.mean) / self.std
        return Xs @ self.weights + self.intercept

    def predict_proba(self, X: np.ndarray) -> np.ndarray:
        with np.errstate(over="ignore"):
            return 1.0 / (1.0 + np.exp(-self.decision(X)))


def elastic_net_objective(Xs, y_pm, w, b, lam, alpha) -> float:
    """Mean logistic loss + lam * (alpha * l1 + (1 - alpha)/2 * l2^2)."""
    z = y_pm * (Xs @ w + b)
    loss = float(np.logaddexp(0.0, -z).mean())
    return loss + lam * (alpha * np.abs(w).sum() + 0.5 * (1 - alpha) * (w @ w))


def _fit_enet_standardized(Xs, y_pm, lam, alpha, tol, max_iter,
                           fit_intercept, lips_base, w0=None, b0=0.0):
    """FISTA with adaptive restart; l1 and ridge both handled by the prox.

    The smooth part is the logistic loss alone, so the step size stays usable
    at large lambda and the unpenalized intercept converges at loss speed.
    """
    n, p = Xs.shape
    w = np.zeros(p) if w0 is None else w0.copy()
    b = float(b0) if fit_intercept else 0.0
    step = 1.0 / lips_base
    thresh = lam * alpha * step
    ridge_shrink = 1.0 / (1.0 + lam * (1 - alpha) * step)

    vw, vb = w.copy(), b
    t_mom = 1.0
    prev_obj = elastic_net_objective(Xs, y_pm, w, b, lam, alpha)
    for _ in range(max_iter):
        z = y_pm * (Xs @ vw + vb)
        with np.errstate(over="ignore"):  # exp(large) -> inf -> s -> 0, as intended
            s = 1.0 / (1.0 + np.exp(z))  # sigma(-z)
        coeff = -(y_pm * s) / n
        w_new = vw - step * (Xs.T @ coeff)
        w_new = np.sign(w_new) * np.maximum(np.abs(w_new) - thresh, 0.0) * ridge_shrink
        if fit_intercept:
            b_new = vb - step * float(coeff.sum())
        else:
            b_new = 0.0
        obj = elastic_net_objective(Xs, y_pm, w_new, b_new, lam, alpha)
        if obj > prev_obj:  # restart momentum
            vw, vb = w, b
            t_mom = 1.0
            continue
        t_next = 0.5 * (1.0 + np.sqrt(1.0 + 4.0 * t_mom * t_mom))
        mom = (t_mom - 1.0) / t_next
        vw = w_new + mom * (w_new - w)
        vb = b_new + mom * (b_new - b)
        w, b, t_mom = w_new, b_new, t_next
        if abs(prev_obj - obj) <= tol * max(1.0, abs(obj)):
            prev_obj = obj
            break
        prev_obj = obj
    return w, b, prev_obj


def _stratified_folds(y, folds, seed):
    assignments = np.empty(len(y), dtype=np.int64)
    for label in np.unique(y):
        idx = np.flatnonzero(y == label)
        if len(idx) < folds:
            raise ConfigError(
                f"class {label} has {len(idx)} samples, fewer than {folds} folds"
            )
        rng = np.random.default_rng(np.random.SeedSequence([seed, 0xF01D, int(label)]))
        shuffled = idx[rng.permutation(len(idx))]
        assignments[shuffled] = np.arange(len(idx)) % folds
    return assignments


def fit_elastic_net(X, y, lambdas=DEFAULT_LAMBDAS, alphas=DEFAULT_ALPHAS,
                    folds: int = 5, seed: int = 0, fit_intercept: bool = True,
                    tol: float = 1e-7, max_iter: int = 5000) -> LinearModel:
    """Cross-validated elastic-net logistic regression on standardized features.

    The (lambda, alpha) grid point with the best mean validation AUC across
    stratified folds wins (ties keep the first in alpha-ascending,
    lambda-descending order), then the model refits on all rows.
    """
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y)
    if not np.all(np.isfinite(X)):
        raise NumericsError("non-finite feature values")
    if len(np.unique(y)) < 2:
        raise DataError("need both classes to fit a classifier")
    mean = X.mean(axis=0)
    std = X.std(axis=0)
    std[std == 0.0] = 1.0
    Xs = (X - mean) / std
    y_pm = np.where(y > 0, 1.0, -1.0)

    lambdas = sorted(set(float(l) for l in lambdas), reverse=True)
    alphas = sorted(set(float(a) for a in alphas))
    cv_table = []
    if folds < 2:
        if len(lambdas) != 1 or len(alphas) != 1:
            raise ConfigError("folds < 2 disables cross-validation; "
                              "supply exactly one (lambda, alpha) grid point")
        alpha, lam = alphas[0], lambdas[0]
    else:
        fold_of = _stratified_folds(y, folds, seed)
        fold_sets = []
        for f in range(folds):
            va = fold_of == f
            tr = ~va
            lb = float(np.linalg.norm(
                np.hstack([Xs[tr], np.ones((int(tr.sum()), 1))]), 2) ** 2 / (4 * tr.sum()))
            fold_sets.append((tr, va, lb))

        best = None  # (mean_auc, alpha, lam)
        for alpha in alphas:
            warm = [None] * folds
            for lam in lambdas:
                aucs = []
                for f, (tr, va, lb) in enumerate(fold_sets):
                    w0 = warm[f][0] if warm[f] else None
                    b0 = warm[f][1] if warm[f] else 0.0
                    w, b, _ = _fit_enet_standardized(
                        Xs[tr], y_pm[tr], lam, alpha, tol, max_iter,
                        fit_intercept, lb, w0, b0)
                    warm[f] = (w, b)
                    scores = Xs[va] @ w + b
                    aucs.append(auc(scores, y[va]))
                mean_auc = float(np.mean(aucs))
                cv_table.append({"lambda": lam, "alpha": alpha, "mean_val_auc": mean_auc})
                if best is None or mean_auc > best[0]:
                    best = (mean_auc, alpha, lam)
        _, alpha, lam = best
    lips_base = float(np.linalg.norm(
        np.hstack([Xs, np.ones((len(y), 1))]), 2) ** 2 / (4 * len(y)))
    w, b, obj = _fit_enet_standardized(Xs, y_pm, lam, alpha, tol, max_iter,
                                       fit_intercept, lips_base)
    return LinearModel(w, float(b), lam, alpha, mean, std, float(obj), cv_table)


# --- metrics ---------------------------------------------------------------


def _midranks(x: np.ndarray) -> np.ndarray:
    order = np.argsort(x, kind="mergesort")
    ranks = np.empty(len(x), dtype=np.float64)
    xs = x[order]
    i = 0
    n = len(x)
    while i < n:
        j = i
        while j < n and xs[j] == xs[i]:
            j += 1
        ranks[order[i:j]] = 0.5 * (i + j + 1)  # average of ranks i+1 .. j
        i = j
    return ranks


def auc(scores, labels) -> float:
    """Mann-Whitney AUC with midrank tie handling."""
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels)
    pos = labels > 0
    n_pos = int(pos.sum())
    n_neg = len(labels) - n_pos
    if n_pos == 0 or n_neg == 0:
        raise DataError("AUC needs both classes present")
    ranks = _midranks(scores)
    return float((ranks[pos].sum() - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg))


def calibration(scores, labels, n_bins: int = 10):
    """Equal-width bins over [0, 1]; per nonempty bin observed vs expected.

    Returns (bins, mse): bins are dicts with lo/hi/count/mean_predicted/
    observed_rate; mse averages (mean_predicted - observed_rate)^2 over
    nonempty bins.
    """
    if n_bins < 2:
        raise ConfigError(f"n_bins must be >= 2, got {n_bins}")
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels).astype(np.float64)
    idx = np.minimum((scores * n_bins).astype(int), n_bins - 1)
    idx = np.maximum(idx, 0)
    bins = []
    errors = []
    for b in range(n_bins):
        mask = idx == b
        count = int(mask.sum())
        if count == 0:
            continue
        mean_pred = float(scores[mask].mean())
        observed = float(labels[mask].mean())
        bins.append({
            "lo": b / n_bins, "hi": (b + 1) / n_bins, "count": count,
            "mean_predicted": mean_pred, "observed_rate": observed,
        })
        errors.append((mean_pred - observed) ** 2)
    mse = float(np.mean(errors)) if errors else 0.0
    return bins, mse


# --- task orchestration -----------------------------------------------------


@dataclass(slots=True)
class EvalOptions:
    vocab: Vocabulary
    seed: int = 0
    infer_epochs: int = DEFAULT_INFER_EPOCHS
    infer_alpha: tuple[float, float] = (0.025, 1e-4)
    num_negatives: int = 5
    folds: int = 5
    lambdas: tuple = DEFAULT_LAMBDAS
    alphas: tuple = DEFAULT_ALPHAS
    n_bins: int = 10
    fingerprint: str | None = None
    ratios: tuple = (0.75, 0.20, 0.05)


@dataclass(slots=True)
class EvalResult:
    report: dict
    instances: list
    split: Split
    bow_X: np.ndarray
    bow_names: list[str]
    emb_X: np.ndarray

    def report_json(self) -> str:
        return json.dumps(self.report, sort_keys=True, indent=1) + "\n"


def _rep_metrics(X, instances, part_of, options) -> dict:
    y = np.array([inst.label for inst in instances])
    tr = part_of == 0
    te = part_of == 1
    va = part_of == 2
    model = fit_elastic_net(X[tr], y[tr], options.lambdas, options.alphas,
                            options.folds, options.seed)
    out = {}
    for split_name, mask in (("test", te), ("validation", va)):
        if int(y[mask].sum()) in (0, int(mask.sum())):
            out[f"auc_{split_name}"] = None
            continue
        probs = model.predict_proba(X[mask])
        bins, mse = calibration(probs, y[mask], options.n_bins)
        out[f"auc_{split_name}"] = auc(probs, y[mask])
        if split_name == "test":
            out["calibration_bins"] = bins
            out["calibration_mse"] = mse
    out["lambda"] = model.lam
    out["alpha"] = model.alpha
    out["nonzero_weights"] = int(np.count_nonzero(model.weights))
    out["cv_best_auc"] = max(row["mean_val_auc"] for row in model.cv_table)
    return out


def run_task(records, labels, event_day, task: TaskSpec, model: EmbeddingModel,
             options: EvalOptions) -> EvalResult:
    """Full protocol for one task; returns the report plus exportable matrices."""
    if options.vocab.fingerprint() != model.vocab_fingerprint():
        raise FingerprintError(
            "evaluation vocabulary does not match the embedding model's vocabulary"
        )
    positives, negatives = build_cohort(records, labels, event_day, task)
    match_report = None
    if task.match:
        negatives, match_report = match_negatives(positives, negatives)
    instances = positives + negatives
    # Embeddings need at least one in-vocabulary token; drop the stragglers
    # from both representations so each sees byte-identical inputs.
    encoded = [encode(inst.record, options.vocab) for inst in instances]
    keep = [i for i, enc in enumerate(encoded) if len(enc) > 0]
    dropped = len(instances) - len(keep)
    instances = [instances[i] for i in keep]
    encoded = [encoded[i] for i in keep]

    bow_X, bow_names = bow_matrix(instances, options.vocab)
    emb_rows = []
    for inst, enc in zip(instances, encoded):
        seed_i = kernels.document_seed(options.seed, f"eval:{inst.record_id}", 0)
        inst.emb = infer(model, enc, options.infer_epochs, options.infer_alpha,
                         seed_i, options.num_negatives).vector
        emb_rows.append(inst.emb)
        inst.bow = None  # column basis lives in bow_X / bow_names
    emb_X = np.stack(emb_rows).astype(np.float64)

    parts = split(instances, options.ratios, options.seed)
    index_of = {id(inst): i for i, inst in enumerate(instances)}
    part_of = np.empty(len(instances), dtype=np.int64)
    for pi, group in enumerate((parts.train, parts.test, parts.validation)):
        for inst in group:
            part_of[index_of[id(inst)]] = pi

    report = {
        "task": {
            "name": task.name,
            "horizon_days": task.horizon_days,
            "cutoff_code_prefix": task.cutoff_code_prefix,
            "selection_code_prefix": task.selection_code_prefix,
            "match": task.match,
            "min_dx_events": task.min_dx_events,
            "min_history_days": task.min_history_days,
        },
        "fingerprint": options.fingerprint,
        "counts": {
            "positives": sum(1 for i in instances if i.label == 1),
            "negatives": sum(1 for i in instances if i.label == 0),
            "dropped_unrepresentable": dropped,
        },
        "infer_epochs": options.infer_epochs,
        "split_manifest": parts.manifest(),
        "bow_feature_count": len(bow_names),
        "representations": {
            "embedded": _rep_metrics(emb_X, instances, part_of, options),
            "bow": _rep_metrics(bow_X, instances, part_of, options),
        },
    }
    if match_report is not None:
        report["matching"] = {
            "smd_before": match_report.smd_before,
            "smd_after": match_report.smd_after,
            "pool_size": match_report.n_negatives_pool,
        }
    return EvalResult(report, instances, parts, bow_X, bow_names, emb_X)


def write_sparse_tsv(X, path, fingerprint=None) -> None:
    """Sparse feature export: row, col, value per line."""
    X = np.asarray(X)
    with open(path, "w", encoding="utf-8") as fh:
        if fingerprint is not None:
            fh.write(f"# seqvec-fingerprint: {fingerprint}\n")
        rows, cols = np.nonzero(X)
        for r, c in zip(rows, cols):
            fh.write(f"{r}\t{c}\t{repr(float(X[r, c]))}\n")


def write_dense_tsv(ids, X, path, fingerprint=None) -> None:
    from .inference import write_vectors_tsv

    write_vectors_tsv(ids, X, path, fingerprint)
