"""Epoch-driven SGD over an encoded corpus, plus model (de)serialization.

Single-worker runs with a fixed seed are bit-reproducible. Multi-worker runs
partition documents across threads that update the shared token/output
matrices without locks (each document vector still has a single writer);
individual updates may interleave or be lost, which trades exactness for
throughput without hurting downstream quality beyond the documented
tolerance.
"""

from __future__ import annotations

import json
import logging
import struct
import threading
from dataclasses import dataclass, field, asdict

import numpy as np

from . import kernels
from .corpus import Record, Vocabulary, build_vocab, encode
from .embedding import (
    EmbeddingModel,
    K_GRID,
    MODES,
    OBJECTIVES,
    WINDOW_GRID,
    build_huffman,
    build_noise_table,
    init_model,
)
from .errors import ConfigError, ContainerError, NumericsError

logger = logging.getLogger(__name__)

MAGIC = b"SQV1"
CONTAINER_VERSION = 1

DEFAULT_INITIAL_ALPHA = 0.025
DEFAULT_FINAL_ALPHA = 1e-4


@dataclass(slots=True)
class TrainConfig:
    mode: str = "dbow"
    objective: str = "hs"
    k: int = 100
    window: int = 10
    epochs: int = 20
    initial_alpha: float = DEFAULT_INITIAL_ALPHA
    final_alpha: float = DEFAULT_FINAL_ALPHA
    num_negatives: int = 5
    workers: int = 1
    seed: int = 1
    min_count: int = 250
    dbow_train_words: bool = False

    def __post_init__(self):
        if self.mode not in MODES:
            raise ConfigError(f"mode must be one of {MODES}, got {self.mode!r}")
        if self.objective not in OBJECTIVES:
            raise ConfigError(f"objective must be one of {OBJECTIVES}, got {self.objective!r}")
        if self.epochs < 1:
            raise ConfigError(f"epochs must be >= 1, got {self.epochs}")
        if not (0 < self.final_alpha <= self.initial_alpha):
            raise ConfigError(
                f"need 0 < final_alpha <= initial_alpha, got "
                f"{self.final_alpha} / {self.initial_alpha}"
            )
        if self.window < 1:
            raise ConfigError(f"window must be >= 1, got {self.window}")
        if self.num_negatives < 1:
            raise ConfigError(f"num_negatives must be >= 1, got {self.num_negatives}")
        if self.workers < 1:
            raise ConfigError(f"workers must be >= 1, got {self.workers}")
        if self.k < 1:
            raise ConfigError(f"k must be >= 1, got {self.k}")
        if not (0 <= self.seed < 2 ** 64):
            raise ConfigError(f"seed must fit an unsigned 64-bit integer, got {self.seed}")

    def to_dict(self) -> dict:
        return asdict(self)


def alpha_at(t: int, total: int, initial: float, final: float) -> float:
    """Learning rate at scheduled position t of total; linear decay."""
    return initial + (final - initial) * (t / total)


def encode_corpus(records, vocab: Vocabulary) -> list[np.ndarray]:
    return [encode(rec, vocab) for rec in records]


def _epoch_order(seed: int, epoch: int, n_docs: int) -> np.ndarray:
    rng = np.random.default_rng(np.random.SeedSequence([seed, 0xED, epoch]))
    return rng.permutation(n_docs)


def _check_finite(model: EmbeddingModel, epoch: int) -> None:
    for name, arr in (
        ("doc_vectors", model.doc_vectors),
        ("token_vectors", model.token_vectors),
        ("output_weights", model.output_weights),
    ):
        if not np.all(np.isfinite(arr)):
            raise NumericsError(
                f"non-finite values in {name} after epoch {epoch}; "
                f"try a smaller initial_alpha"
            )


def _run_epochs(model: EmbeddingModel, encoded, config: TrainConfig,
                epoch_range, progress=None) -> None:
    mode_dbow = model.mode == "dbow"
    obj_ns = model.objective == "ns"
    tree = model.huffman() if not obj_ns else None
    noise = model.noise() if obj_ns else None
    hs_nodes, hs_bits, hs_offsets, hs_maxlen, cum = kernels.kernel_args(None, tree, noise)

    lengths = np.array([len(doc) for doc in encoded], dtype=np.int64)
    positions_per_epoch = int(lengths.sum())
    if positions_per_epoch == 0:
        raise ConfigError("encoded corpus is empty: nothing to train on")
    n_epochs = len(epoch_range)
    total_positions = n_epochs * positions_per_epoch

    a0 = float(config.initial_alpha)
    a_diff = float(config.final_alpha) - a0
    train_words = bool(config.dbow_train_words)

    run_document = kernels.run_document
    doc_vecs = model.doc_vectors
    tok_vecs = model.token_vectors
    out_w = model.output_weights

    for pass_idx, epoch in enumerate(epoch_range):
        order = _epoch_order(config.seed, epoch, len(encoded))
        offsets = np.zeros(len(order) + 1, dtype=np.int64)
        np.cumsum(lengths[order], out=offsets[1:])
        epoch_base = pass_idx * positions_per_epoch

        loss_sums = [0.0] * config.workers
        pair_sums = [0] * config.workers

        def work(worker_idx, doc_slice):
            loss_acc = 0.0
            pairs_acc = 0
            for visit in doc_slice:
                d = int(order[visit])
                tokens = encoded[d]
                if len(tokens) == 0:
                    continue
                seed_d = kernels.document_seed(config.seed, f"train:{epoch}", d)
                uniforms = kernels.uniforms_for(
                    len(tokens), config.window, model.mode, model.objective,
                    config.num_negatives, seed_d, train_words,
                )
                loss, pairs = run_document(
                    doc_vecs[d], tok_vecs, out_w, tokens,
                    mode_dbow, obj_ns, config.window, config.num_negatives,
                    train_words,
                    hs_nodes, hs_bits, hs_offsets, hs_maxlen,
                    cum, uniforms,
                    a0, a_diff, epoch_base + int(offsets[visit]), total_positions,
                    True, True,
                )
                loss_acc += loss
                pairs_acc += pairs
            loss_sums[worker_idx] = loss_acc
            pair_sums[worker_idx] = pairs_acc

        if config.workers == 1:
            work(0, range(len(order)))
        else:
            bounds = np.linspace(0, len(order), config.workers + 1).astype(int)
            threads = [
                threading.Thread(target=work, args=(w, range(bounds[w], bounds[w + 1])))
                for w in range(config.workers)
            ]
            for th in threads:
                th.start()
            for th in threads:
                th.join()

        _check_finite(model, epoch)
        total_loss = sum(loss_sums)
        total_pairs = sum(pair_sums)
        mean_loss = total_loss / total_pairs if total_pairs else float("nan")
        entry = {
            "epoch": epoch,
            "mean_loss": mean_loss,
            "alpha": alpha_at(epoch_base, total_positions, config.initial_alpha,
                              config.final_alpha),
        }
        logger.info("%s", json.dumps(entry, sort_keys=True))
        if progress is not None:
            progress(entry)
        model.epochs = epoch + 1


def train(records: list[Record], vocab: Vocabulary, config: TrainConfig,
          progress=None) -> EmbeddingModel:
    """Train a fresh model over the corpus for config.epochs epochs."""
    if not records:
        raise ConfigError("cannot train on an empty corpus")
    encoded = encode_corpus(records, vocab)
    model = init_model(config.mode, config.objective, config.k, config.window,
                       len(records), vocab, config.seed)
    _run_epochs(model, encoded, config, range(config.epochs), progress)
    return model


def continue_training(model: EmbeddingModel, records: list[Record],
                      extra_epochs: int, config: TrainConfig,
                      progress=None) -> EmbeddingModel:
    """Resume training for extra_epochs more epochs on the same vocabulary.

    The learning rate decays linearly over the extra epochs (the original
    schedule already reached final_alpha). Epoch bookkeeping continues from
    the stored counter, so document visit orders and sampling streams differ
    from the first run.
    """
    if extra_epochs < 0:
        raise ConfigError(f"extra_epochs must be >= 0, got {extra_epochs}")
    corpus_vocab = build_vocab(records, min_count=config.min_count,
                               group_depth=model.vocab.group_depth)
    if corpus_vocab.fingerprint() != model.vocab_fingerprint():
        raise ConfigError(
            "corpus vocabulary does not match the model's vocabulary "
            "fingerprint; refusing to resume"
        )
    if extra_epochs == 0:
        return model
    if len(records) != model.num_docs:
        raise ConfigError(
            f"corpus holds {len(records)} records but the model has "
            f"{model.num_docs} document vectors"
        )
    encoded = encode_corpus(records, model.vocab)
    _run_epochs(model, encoded, config,
                range(model.epochs, model.epochs + extra_epochs), progress)
    return model


# --- container format ----------------------------------------------------
#
# magic "SQV1" | u16 version | u8 mode | u8 objective | u32 k | u64 V |
# u64 D | u32 window | u32 epochs | u64 seed |
# V x (u32 code_len | code utf-8 | u64 count) |
# doc, token, output matrices, row-major little-endian float32

_HEADER = struct.Struct("<BBIQQIIQ")

_MODE_CODE = {"dm": 0, "dbow": 1}
_OBJ_CODE = {"hs": 0, "ns": 1}
_MODE_NAME = {v: k for k, v in _MODE_CODE.items()}
_OBJ_NAME = {v: k for k, v in _OBJ_CODE.items()}


def save(model: EmbeddingModel, path) -> None:
    """Write the model container; save -> load -> save is byte-identical."""
    vocab = model.vocab
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<H", CONTAINER_VERSION))
        fh.write(_HEADER.pack(
            _MODE_CODE[model.mode], _OBJ_CODE[model.objective],
            model.k, len(vocab), model.num_docs, model.window,
            model.epochs, model.seed,
        ))
        for code, count in zip(vocab.codes, vocab.counts):
            raw = code.encode("utf-8")
            fh.write(struct.pack("<I", len(raw)))
            fh.write(raw)
            fh.write(struct.pack("<Q", int(count)))
        for arr in (model.doc_vectors, model.token_vectors, model.output_weights):
            fh.write(np.ascontiguousarray(arr, dtype="<f4").tobytes())


def load(path) -> EmbeddingModel:
    """Read a model container back; raises ContainerError on any defect."""
    with open(path, "rb") as fh:
        blob = fh.read()
    if blob[:4] != MAGIC:
        raise ContainerError(f"bad magic {blob[:4]!r}, expected {MAGIC!r}", offset=0)
    (version,) = struct.unpack_from("<H", blob, 4)
    if version != CONTAINER_VERSION:
        raise ContainerError(f"unsupported container version {version}", offset=4)
    off = 6
    try:
        mode_c, obj_c, k, v, d, window, epochs, seed = _HEADER.unpack_from(blob, off)
    except struct.error:
        raise ContainerError("truncated header", offset=off) from None
    off += _HEADER.size
    if mode_c not in _MODE_NAME or obj_c not in _OBJ_NAME:
        raise ContainerError(f"unknown mode/objective codes ({mode_c}, {obj_c})", offset=6)
    codes = []
    counts = np.empty(v, dtype=np.int64)
    for i in range(v):
        if off + 4 > len(blob):
            raise ContainerError("truncated vocabulary block", offset=off)
        (code_len,) = struct.unpack_from("<I", blob, off)
        off += 4
        if off + code_len + 8 > len(blob):
            raise ContainerError("truncated vocabulary entry", offset=off)
        codes.append(blob[off:off + code_len].decode("utf-8"))
        off += code_len
        (counts[i],) = struct.unpack_from("<Q", blob, off)
        off += 8
    vocab = Vocabulary(codes, counts, min_count=1, group_depth=1)
    out_rows = v - 1 if _OBJ_NAME[obj_c] == "hs" else v
    shapes = ((d, k), (v, k), (out_rows, k))
    mats = []
    for shape in shapes:
        n_bytes = int(shape[0]) * int(shape[1]) * 4
        if off + n_bytes > len(blob):
            raise ContainerError("truncated matrix block", offset=off)
        mats.append(
            np.frombuffer(blob, dtype="<f4", count=shape[0] * shape[1], offset=off)
            .reshape(shape).astype(np.float32)
        )
        off += n_bytes
    if off != len(blob):
        raise ContainerError(f"{len(blob) - off} trailing bytes after matrices", offset=off)
    return EmbeddingModel(
        _MODE_NAME[mode_c], _OBJ_NAME[obj_c], k, window,
        mats[0], mats[1], mats[2], vocab, seed, epochs,
    )


def save_sidecar(path, payload: dict) -> None:
    """CLI metadata (fingerprint, record ids, runtime params) next to a container."""
    with open(str(path) + ".meta.json", "w", encoding="utf-8") as fh:
        json.dump(payload, fh, sort_keys=True, indent=0)
        fh.write("\n")


def load_sidecar(path) -> dict | None:
    try:
        with open(str(path) + ".meta.json", encoding="utf-8") as fh:
            return json.load(fh)
    except FileNotFoundError:
        return None
