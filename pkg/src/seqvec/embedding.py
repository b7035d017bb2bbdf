"""Model parameters and the exact loss/gradient math for both objectives.

Two training modes:

* ``dm``   -- predict the token at a position from the mean of the record
              vector and the surrounding token vectors.
* ``dbow`` -- predict every token in the window (center included) from the
              record vector alone.

Two output objectives:

* ``hs`` -- hierarchical softmax over a Huffman tree of the vocabulary.
* ``ns`` -- negative sampling against a powered unigram noise distribution.

The functions here are dtype-preserving reference implementations: training
runs them in float32 through the fused kernels in ``seqvec.kernels``, while
gradient checks re-instantiate the same math in float64.
"""

from __future__ import annotations

import heapq
from dataclasses import dataclass, field

import numpy as np

from .corpus import Vocabulary
from .errors import ConfigError, NumericsError

MODES = ("dm", "dbow")
OBJECTIVES = ("hs", "ns")

# Hyperparameter grids mirrored by the CLI defaults.
K_GRID = (10, 50, 100, 300, 500, 1000)
WINDOW_GRID = (5, 10, 20, 30, 50)

DEFAULT_NOISE_EXPONENT = 0.75


def sigmoid(x):
    return 1.0 / (1.0 + np.exp(-x))


@dataclass(slots=True)
class HuffmanTree:
    """Root-to-leaf paths of a Huffman tree, in CSR layout.

    For token i, ``nodes[offsets[i]:offsets[i+1]]`` are the internal-node
    indices on its path and ``bits`` the branch taken at each (0 = left,
    1 = right). Internal nodes are numbered 0..V-2.
    """

    nodes: np.ndarray    # int32
    bits: np.ndarray     # int8
    offsets: np.ndarray  # int64, length V+1

    def path(self, token: int) -> np.ndarray:
        return self.nodes[self.offsets[token]:self.offsets[token + 1]]

    def path_bits(self, token: int) -> np.ndarray:
        return self.bits[self.offsets[token]:self.offsets[token + 1]]

    def code_length(self, token: int) -> int:
        return int(self.offsets[token + 1] - self.offsets[token])

    @property
    def num_tokens(self) -> int:
        return len(self.offsets) - 1

    @property
    def num_internal(self) -> int:
        return self.num_tokens - 1

    def expected_code_length(self, counts) -> float:
        counts = np.asarray(counts, dtype=np.float64)
        lens = np.diff(self.offsets)
        return float((counts * lens).sum() / counts.sum())


def build_huffman(vocab: Vocabulary) -> HuffmanTree:
    """Deterministic Huffman tree over token counts, ties broken by node id.

    Leaves are tokens; merged nodes get ids V, V+1, ... in creation order so
    the same counts always produce the same tree.
    """
    v = len(vocab)
    if v < 2:
        raise ConfigError(f"hierarchical softmax needs a vocabulary of size >= 2, got {v}")
    counts = [int(c) for c in vocab.counts]
    # heap entries: (count, node_id); children[node_id - v] = (left, right)
    heap = [(counts[i], i) for i in range(v)]
    heapq.heapify(heap)
    children = []
    next_id = v
    while len(heap) > 1:
        c1, n1 = heapq.heappop(heap)
        c2, n2 = heapq.heappop(heap)
        children.append((n1, n2))
        heapq.heappush(heap, (c1 + c2, next_id))
        next_id += 1
    root = heap[0][1]

    paths: list[list[int]] = [[] for _ in range(v)]
    bits: list[list[int]] = [[] for _ in range(v)]
    # Internal node index = node_id - v, so the root is index V-2.
    stack = [(root, [], [])]
    while stack:
        node, p, b = stack.pop()
        if node < v:
            paths[node] = p
            bits[node] = b
        else:
            internal = node - v
            left, right = children[internal]
            stack.append((left, p + [internal], b + [0]))
            stack.append((right, p + [internal], b + [1]))

    offsets = np.zeros(v + 1, dtype=np.int64)
    for i in range(v):
        offsets[i + 1] = offsets[i] + len(paths[i])
    nodes = np.empty(offsets[-1], dtype=np.int32)
    bit_arr = np.empty(offsets[-1], dtype=np.int8)
    for i in range(v):
        nodes[offsets[i]:offsets[i + 1]] = paths[i]
        bit_arr[offsets[i]:offsets[i + 1]] = bits[i]
    return HuffmanTree(nodes, bit_arr, offsets)


@dataclass(slots=True)
class NoiseTable:
    """Cumulative distribution over tokens with P(i) proportional to count_i^exponent."""

    cum: np.ndarray  # float64, nondecreasing, cum[-1] == 1.0
    exponent: float

    @property
    def probabilities(self) -> np.ndarray:
        return np.diff(self.cum, prepend=0.0)

    def sample(self, rng: np.random.Generator, n: int) -> np.ndarray:
        """Draw n token indices (used by fidelity tests; kernels inline the search)."""
        u = rng.random(n)
        return np.searchsorted(self.cum, u, side="right").astype(np.int64)

    def sample_excluding(self, u: float, excluded: int) -> int:
        """Map one uniform draw to a token != excluded.

        Inverse-CDF sampling on the distribution conditioned on the excluded
        token: identical in law to redrawing until the draw differs from it.
        """
        lo = self.cum[excluded - 1] if excluded > 0 else 0.0
        hi = self.cum[excluded]
        scaled = u * (1.0 - (hi - lo))
        if scaled >= lo:
            scaled += hi - lo
        idx = int(np.searchsorted(self.cum, scaled, side="right"))
        return min(idx, len(self.cum) - 1)


def build_noise_table(vocab: Vocabulary, exponent: float = DEFAULT_NOISE_EXPONENT) -> NoiseTable:
    if exponent <= 0:
        raise ConfigError(f"noise exponent must be > 0, got {exponent}")
    weights = np.asarray(vocab.counts, dtype=np.float64) ** exponent
    cum = np.cumsum(weights)
    cum /= cum[-1]
    cum[-1] = 1.0
    return NoiseTable(cum, exponent)


@dataclass(slots=True)
class EmbeddingModel:
    """Parameter container for a trained (or in-training) model.

    ``output_weights`` is the single active output matrix: Huffman internal
    node vectors, shape (V-1, k), under ``hs``; per-token output vectors,
    shape (V, k), under ``ns``.
    """

    mode: str
    objective: str
    k: int
    window: int
    doc_vectors: np.ndarray     # float32, (D, k)
    token_vectors: np.ndarray   # float32, (V, k)
    output_weights: np.ndarray  # float32
    vocab: Vocabulary
    seed: int
    epochs: int = 0
    _tree: HuffmanTree | None = field(default=None, repr=False)
    _noise: NoiseTable | None = field(default=None, repr=False)

    @property
    def num_docs(self) -> int:
        return self.doc_vectors.shape[0]

    def vocab_fingerprint(self) -> str:
        return self.vocab.fingerprint()

    def huffman(self) -> HuffmanTree:
        if self._tree is None:
            self._tree = build_huffman(self.vocab)
        return self._tree

    def noise(self) -> NoiseTable:
        if self._noise is None:
            self._noise = build_noise_table(self.vocab)
        return self._noise


def init_model(mode, objective, k, window, num_docs, vocab, seed) -> EmbeddingModel:
    """Fresh parameters: doc/token vectors uniform in (-0.5/k, 0.5/k), outputs zero.

    Zero output weights put every initial per-term loss at exactly ln 2.
    """
    if mode not in MODES:
        raise ConfigError(f"mode must be one of {MODES}, got {mode!r}")
    if objective not in OBJECTIVES:
        raise ConfigError(f"objective must be one of {OBJECTIVES}, got {objective!r}")
    if len(vocab) < 2:
        raise ConfigError("vocabulary must hold at least 2 tokens")
    v = len(vocab)
    scale = 0.5 / k
    rng_doc = np.random.default_rng(np.random.SeedSequence([seed, 0xD0C]))
    rng_tok = np.random.default_rng(np.random.SeedSequence([seed, 0x70C]))
    doc = rng_doc.uniform(-scale, scale, size=(num_docs, k)).astype(np.float32)
    tok = rng_tok.uniform(-scale, scale, size=(v, k)).astype(np.float32)
    out_rows = v - 1 if objective == "hs" else v
    out = np.zeros((out_rows, k), dtype=np.float32)
    return EmbeddingModel(mode, objective, k, window, doc, tok, out, vocab, seed)


def context_vector_dm(model: EmbeddingModel, doc_id: int, context_tokens) -> np.ndarray:
    """Mean of the record vector and the context token vectors.

    An empty context returns the record vector itself.
    """
    h = model.doc_vectors[doc_id].astype(np.float64)
    n = 1
    for c in context_tokens:
        h = h + model.token_vectors[c]
        n += 1
    return (h / n).astype(model.doc_vectors.dtype)


def dm_context_indices(doc_tokens, position: int, window: int) -> np.ndarray:
    """Token indices in the window around ``position``, excluding the target itself."""
    lo = max(0, position - window)
    hi = min(len(doc_tokens), position + window + 1)
    ctx = [int(doc_tokens[q]) for q in range(lo, hi) if q != position]
    return np.asarray(ctx, dtype=np.int32)


def dbow_step_inputs(doc_tokens, position: int, window: int) -> np.ndarray:
    """Target token indices for one DBOW step: the window including the center."""
    if position < 0 or position >= len(doc_tokens):
        raise ConfigError(f"position {position} outside document of length {len(doc_tokens)}")
    lo = max(0, position - window)
    hi = min(len(doc_tokens), position + window + 1)
    return np.asarray([int(doc_tokens[q]) for q in range(lo, hi)], dtype=np.int32)


def _check_finite(*arrays):
    for a in arrays:
        if not np.all(np.isfinite(a)):
            raise NumericsError("non-finite value in loss/gradient inputs")


def loss_and_grads_hs(h, target: int, tree: HuffmanTree, hs_weights):
    """Hierarchical-softmax loss and exact gradients at one target.

    loss = -sum_j log sigma((1 - 2 bit_j) <w_node_j, h>) over the target's
    Huffman path. Returns (loss, grad_h, (path_nodes, grad_rows)) where
    grad_rows[j] is d loss / d w_node_j; nodes off the path have zero grad.
    """
    h = np.asarray(h)
    _check_finite(h)
    nodes = tree.path(target)
    bits = tree.path_bits(target)
    w = hs_weights[nodes]
    _check_finite(w)
    dots = w @ h
    signs = 1.0 - 2.0 * bits.astype(h.dtype)
    probs = sigmoid(signs * dots)
    loss = float(-np.log(probs).sum())
    # d/dx[-log sigma(s x)] = -s (1 - sigma(s x))
    coeff = (-signs * (1.0 - probs)).astype(h.dtype)
    grad_h = coeff @ w
    grad_rows = coeff[:, None] * h[None, :]
    return loss, grad_h, (nodes.copy(), grad_rows)


def draw_negatives(noise: NoiseTable, target: int, num_negatives: int,
                   rng: np.random.Generator) -> np.ndarray:
    """num_negatives noise tokens, each conditioned to differ from the target."""
    if num_negatives < 1:
        raise ConfigError(f"num_negatives must be >= 1, got {num_negatives}")
    u = rng.random(num_negatives)
    return np.asarray(
        [noise.sample_excluding(float(x), target) for x in u], dtype=np.int64
    )


def ns_loss_and_grads_fixed(h, target: int, negatives, ns_weights):
    """Negative-sampling loss and exact gradients for given negative rows.

    loss = -log sigma(<w_target, h>) - sum_i log sigma(-<w_neg_i, h>).
    Returns (loss, grad_h, (rows, grad_rows)) with the target row first.
    """
    h = np.asarray(h)
    _check_finite(h)
    rows = np.concatenate(([target], np.asarray(negatives, dtype=np.int64)))
    w = ns_weights[rows]
    _check_finite(w)
    dots = w @ h
    signs = np.full(len(rows), -1.0, dtype=h.dtype)
    signs[0] = 1.0
    probs = sigmoid(signs * dots)
    loss = float(-np.log(probs).sum())
    coeff = (-signs * (1.0 - probs)).astype(h.dtype)
    grad_h = coeff @ w
    grad_rows = coeff[:, None] * h[None, :]
    return loss, grad_h, (rows, grad_rows)


def loss_and_grads_ns(h, target: int, noise: NoiseTable, ns_weights,
                      num_negatives: int, rng: np.random.Generator):
    """Draw negatives from the noise table, then evaluate the NS loss/gradients."""
    negatives = draw_negatives(noise, target, num_negatives, rng)
    return ns_loss_and_grads_fixed(h, target, negatives, ns_weights)
