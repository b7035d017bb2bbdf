"""Two-component PCA of embedded vectors and per-record trajectories."""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from . import kernels
from .corpus import Record, Vocabulary, encode, truncate
from .embedding import EmbeddingModel
from .errors import ConfigError, DataError
from .inference import DEFAULT_INFER_EPOCHS, infer


@dataclass(slots=True)
class Projection:
    mean: np.ndarray        # (k,)
    components: np.ndarray  # (2, k), orthonormal rows
    explained: np.ndarray   # (2,), fraction of total variance, descending

    def project(self, vectors) -> np.ndarray:
        x = np.asarray(vectors, dtype=np.float64)
        return (x - self.mean) @ self.components.T

    def to_dict(self) -> dict:
        return {
            "mean": [float(v) for v in self.mean],
            "components": [[float(v) for v in row] for row in self.components],
            "explained": [float(v) for v in self.explained],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Projection":
        return cls(np.asarray(d["mean"], dtype=np.float64),
                   np.asarray(d["components"], dtype=np.float64),
                   np.asarray(d["explained"], dtype=np.float64))


def fit_pca2(vectors) -> Projection:
    """Top-2 eigenvectors of the sample covariance.

    Component signs are fixed by making each one's largest-magnitude
    coordinate positive. Collinear clouds are fine (second variance fraction
    0); identical points are not.
    """
    x = np.asarray(vectors, dtype=np.float64)
    if x.ndim != 2 or x.shape[0] < 3:
        raise DataError(f"need at least 3 vectors, got shape {x.shape}")
    if x.shape[1] < 2:
        raise DataError(f"need at least 2 dimensions, got {x.shape[1]}")
    mean = x.mean(axis=0)
    xc = x - mean
    cov = (xc.T @ xc) / (x.shape[0] - 1)
    eigvals, eigvecs = np.linalg.eigh(cov)
    total = float(np.clip(eigvals, 0.0, None).sum())
    if total == 0.0:
        raise DataError("degenerate input: all vectors identical (covariance rank 0)")
    comps = []
    expl = []
    for idx in (-1, -2):
        vec = eigvecs[:, idx]
        if vec[int(np.argmax(np.abs(vec)))] < 0:
            vec = -vec
        comps.append(vec)
        expl.append(max(0.0, float(eigvals[idx])) / total)
    return Projection(mean, np.stack(comps), np.asarray(expl))


@dataclass(slots=True)
class TrajectoryPoint:
    day: int
    x: float
    y: float
    marker: bool


def trajectory(model: EmbeddingModel, record: Record, checkpoints,
               projection: Projection, vocab: Vocabulary,
               event_day: int | None = None,
               infer_epochs: int = DEFAULT_INFER_EPOCHS,
               alpha_schedule=(0.025, 1e-4), seed: int = 0,
               num_negatives: int = 5) -> list[TrajectoryPoint]:
    """Truncate-infer-project the record at each checkpoint day.

    Checkpoints must be strictly ascending. Checkpoints whose truncation has
    no in-vocabulary events are skipped; the marker flags the surviving
    checkpoint closest to ``event_day`` (earlier day wins ties).
    """
    checkpoints = [int(c) for c in checkpoints]
    if any(b <= a for a, b in zip(checkpoints, checkpoints[1:])):
        raise ConfigError(f"checkpoints must be strictly ascending, got {checkpoints}")
    points: list[TrajectoryPoint] = []
    for day in checkpoints:
        encoded = encode(truncate(record, day), vocab)
        if len(encoded) == 0:
            continue
        seed_c = kernels.document_seed(seed, f"trajectory:{record.record_id}", day)
        vec = infer(model, encoded, infer_epochs, alpha_schedule, seed_c,
                    num_negatives).vector
        xy = projection.project(vec[None, :])[0]
        points.append(TrajectoryPoint(day, float(xy[0]), float(xy[1]), False))
    if not points:
        raise DataError(
            f"record {record.record_id}: every checkpoint truncation was empty"
        )
    if event_day is not None:
        nearest_i = min(range(len(points)),
                        key=lambda i: (abs(points[i].day - event_day), points[i].day))
        points[nearest_i].marker = True
    return points


def write_trajectory_tsv(points, path, fingerprint=None) -> None:
    """Plot-ready export: day, pc1, pc2, marker."""
    with open(path, "w", encoding="utf-8") as fh:
        if fingerprint is not None:
            fh.write(f"# seqvec-fingerprint: {fingerprint}\n")
        fh.write("day\tpc1\tpc2\tmarker\n")
        for p in points:
            fh.write(f"{p.day}\t{p.x!r}\t{p.y!r}\t{int(p.marker)}\n")


def save_projection(projection: Projection, path, fingerprint=None) -> None:
    payload = projection.to_dict()
    if fingerprint is not None:
        payload["fingerprint"] = fingerprint
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, sort_keys=True, indent=1)
        fh.write("\n")


def load_projection(path) -> Projection:
    with open(path, encoding="utf-8") as fh:
        return Projection.from_dict(json.load(fh))
