"""Kernel backend selection and shared scheduling helpers.

The hot per-document update loops exist twice: a numba ``@njit`` build in
``_kernels_jit`` (default when numba imports) and a pure-numpy build in
``_kernels_np``. Set ``SEQVEC_PURE_NUMPY=1`` to force the numpy path;
``benchmarks/bench_kernels.py`` measures the gap between the two.
"""

from __future__ import annotations

import hashlib
import os

import numpy as np

PURE_NUMPY_ENV = "SEQVEC_PURE_NUMPY"

_TRUE_VALUES = {"1", "true", "yes", "on"}


def _select_backend() -> str:
    if os.environ.get(PURE_NUMPY_ENV, "").strip().lower() in _TRUE_VALUES:
        return "numpy"
    try:
        import numba  # noqa: F401
    except ImportError:
        return "numpy"
    return "numba"


BACKEND = _select_backend()

if BACKEND == "numba":
    from ._kernels_jit import run_document
else:
    from ._kernels_np import run_document

__all__ = [
    "BACKEND",
    "PURE_NUMPY_ENV",
    "run_document",
    "count_pairs",
    "uniforms_for",
    "document_seed",
]

_EMPTY_I32 = np.empty(0, dtype=np.int32)
_EMPTY_I8 = np.empty(0, dtype=np.int8)
_EMPTY_I64 = np.zeros(1, dtype=np.int64)
_EMPTY_F64 = np.empty(0, dtype=np.float64)


def count_pairs(doc_len: int, window: int, mode: str, train_words: bool = False) -> int:
    """Number of (input, target) pairs one document contributes per epoch."""
    if doc_len == 0:
        return 0
    if mode == "dm":
        return doc_len
    p = np.arange(doc_len)
    spans = np.minimum(doc_len, p + window + 1) - np.maximum(0, p - window)
    pairs = int(spans.sum())
    if train_words:
        pairs *= 2
    return pairs


def document_seed(seed: int, stream: str, index: int) -> int:
    """Stable per-document seed for the negative-sampling uniform stream."""
    digest = hashlib.blake2b(
        f"{seed}|{stream}|{index}".encode(), digest_size=8
    ).digest()
    return int.from_bytes(digest, "little")


def uniforms_for(doc_len: int, window: int, mode: str, objective: str,
                 num_negatives: int, seed: int, train_words: bool = False) -> np.ndarray:
    """Pre-draw the uniforms one document's kernel call will consume."""
    if objective != "ns":
        return _EMPTY_F64
    n = count_pairs(doc_len, window, mode, train_words) * num_negatives
    if n == 0:
        return _EMPTY_F64
    rng = np.random.Generator(np.random.PCG64(seed))
    return rng.random(n)


def kernel_args(model_arrays, tree=None, noise=None):
    """Backend-shaped argument block for structures that may be inactive.

    Returns (hs_nodes, hs_bits, hs_offsets, hs_maxlen, cum) with empty
    placeholders for whichever objective is unused.
    """
    if tree is not None:
        maxlen = int(np.diff(tree.offsets).max()) if tree.num_tokens else 0
        hs = (tree.nodes, tree.bits, tree.offsets, maxlen)
    else:
        hs = (_EMPTY_I32, _EMPTY_I8, _EMPTY_I64, 0)
    cum = noise.cum if noise is not None else _EMPTY_F64
    return (*hs, cum)
