"""Project held-out or truncated records into a trained embedding space.

Inference re-runs the training objective on a single fresh document vector
while every other parameter stays frozen, then answers cosine similarity
queries against stored vectors.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import kernels
from .embedding import EmbeddingModel
from .errors import ConfigError, DataError

DEFAULT_INFER_EPOCHS = 20


@dataclass(slots=True)
class InferredVector:
    vector: np.ndarray
    steps: int
    source_fingerprint: str


def infer(model: EmbeddingModel, encoded_record: np.ndarray,
          infer_epochs: int = DEFAULT_INFER_EPOCHS,
          alpha_schedule: tuple[float, float] = (0.025, 1e-4),
          seed: int = 1, num_negatives: int = 5) -> InferredVector:
    """Fit one new document vector against frozen token/output weights.

    The vector initializes exactly as at training time and follows the
    model's own objective; the training alpha schedule is compressed into
    ``infer_epochs`` passes over the record.
    """
    tokens = np.asarray(encoded_record, dtype=np.int32)
    if len(tokens) == 0:
        raise DataError("unrepresentable record: no in-vocabulary events to infer from")
    if infer_epochs < 0:
        raise ConfigError(f"infer_epochs must be >= 0, got {infer_epochs}")
    a0, af = alpha_schedule
    if not (0 < af <= a0):
        raise ConfigError(f"need 0 < final <= initial alpha, got {alpha_schedule}")

    scale = 0.5 / model.k
    rng = np.random.default_rng(np.random.SeedSequence([seed, 0x1FE]))
    vec = rng.uniform(-scale, scale, size=model.k).astype(np.float32)
    fingerprint = model.vocab_fingerprint()
    if infer_epochs == 0:
        return InferredVector(vec, 0, fingerprint)

    mode_dbow = model.mode == "dbow"
    obj_ns = model.objective == "ns"
    tree = model.huffman() if not obj_ns else None
    noise = model.noise() if obj_ns else None
    hs_nodes, hs_bits, hs_offsets, hs_maxlen, cum = kernels.kernel_args(None, tree, noise)

    total = infer_epochs * len(tokens)
    a_diff = float(af) - float(a0)
    for epoch in range(infer_epochs):
        seed_e = kernels.document_seed(seed, f"infer:{epoch}", 0)
        uniforms = kernels.uniforms_for(
            len(tokens), model.window, model.mode, model.objective,
            num_negatives, seed_e,
        )
        kernels.run_document(
            vec, model.token_vectors, model.output_weights, tokens,
            mode_dbow, obj_ns, model.window, num_negatives, False,
            hs_nodes, hs_bits, hs_offsets, hs_maxlen,
            cum, uniforms,
            float(a0), a_diff, epoch * len(tokens), total,
            False, False,
        )
    return InferredVector(vec, infer_epochs, fingerprint)


def nearest(vectors: np.ndarray, query: np.ndarray, n: int, ids=None):
    """Top-n rows by cosine similarity, descending; ties broken by id.

    ``ids`` defaults to row indices. Zero-norm stored vectors score 0.
    """
    if n < 1:
        raise ConfigError(f"n must be >= 1, got {n}")
    query = np.asarray(query, dtype=np.float64)
    qn = np.linalg.norm(query)
    if qn == 0.0:
        raise DataError("cannot rank against a zero-norm query vector")
    mat = np.asarray(vectors, dtype=np.float64)
    norms = np.linalg.norm(mat, axis=1)
    safe = np.where(norms == 0.0, 1.0, norms)
    scores = (mat @ query) / (safe * qn)
    scores[norms == 0.0] = 0.0
    if ids is None:
        ids = list(range(len(mat)))
    order = sorted(range(len(mat)), key=lambda i: (-scores[i], ids[i]))
    return [(ids[i], float(scores[i])) for i in order[:n]]


def nearest_docs(model: EmbeddingModel, query: np.ndarray, n: int, ids=None):
    return nearest(model.doc_vectors, query, n, ids)


def write_vectors_tsv(ids, vectors, path, fingerprint: str | None = None) -> None:
    """Export per-record vectors: record_id followed by k reals, tab-separated."""
    vectors = np.asarray(vectors)
    with open(path, "w", encoding="utf-8") as fh:
        if fingerprint is not None:
            fh.write(f"# seqvec-fingerprint: {fingerprint}\n")
        for rid, vec in zip(ids, vectors):
            fh.write(rid + "\t" + "\t".join(repr(float(x)) for x in vec) + "\n")


def read_vectors_tsv(path):
    """Inverse of write_vectors_tsv: returns (ids, float32 matrix)."""
    ids, rows = [], []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            if line.startswith("#") or not line.strip():
                continue
            parts = line.rstrip("\n").split("\t")
            ids.append(parts[0])
            rows.append([float(x) for x in parts[1:]])
    return ids, np.asarray(rows, dtype=np.float32)
