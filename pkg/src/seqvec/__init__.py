"""seqvec: record-level embeddings for time-stamped categorical event logs."""

from .corpus import (
    Event,
    Record,
    Vocabulary,
    build_vocab,
    encode,
    ingest,
    truncate,
)
from .embedding import (
    EmbeddingModel,
    HuffmanTree,
    NoiseTable,
    build_huffman,
    build_noise_table,
)
from .evalkit import TaskSpec, auc, calibration, fit_elastic_net, run_task
from .inference import infer, nearest
from .projector import Projection, fit_pca2, trajectory
from .synthgen import GeneratedCohort, ProgramSpec, generate
from .trainer import TrainConfig, continue_training, load, save, train

__version__ = "0.1.0"

__all__ = [
    "Event", "Record", "Vocabulary", "build_vocab", "encode", "ingest",
    "truncate", "EmbeddingModel", "HuffmanTree", "NoiseTable",
    "build_huffman", "build_noise_table", "TaskSpec", "auc", "calibration",
    "fit_elastic_net", "run_task", "infer", "nearest", "Projection",
    "fit_pca2", "trajectory", "GeneratedCohort", "ProgramSpec", "generate",
    "TrainConfig", "continue_training", "load", "save", "train",
    "__version__",
]
