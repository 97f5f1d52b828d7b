"""Conversational emotion recognition over pre-extracted utterance features.

Per-modality projections feed a shared/private disentangler; the shared
subspace is filtered on a spectral interaction graph with a frequency
contrastive objective, the private subspace runs through a speaker-aware
dual hypergraph with a Jacobi-polynomial filter bank, and a small
transformer fuses both branches per utterance for classification. Every
learnable path lives on a reverse-mode autodiff tape whose gradients are
verified against central finite differences.
"""

from .autodiff import (
    AutodiffError,
    NonFiniteError,
    ShapeMismatchError,
    Tape,
    Tensor,
    cosine_sim,
    finite_diff_check,
)
from .config import ConfigError, TrainConfig
from .data import (
    Conversation,
    Dataset,
    DatasetFormatError,
    Utterance,
    load_dataset,
    split_dataset,
    synth_generate,
    write_dataset,
)
from .estimator import ConversationEmotionRecognizer
from .linalg import symmetric_eig
from .metrics import confusion_matrix, per_class_f1, weighted_f1
from .model import EmotionModel, ParamStore
from .trainer import (
    AdamOptimizer,
    Checkpoint,
    EvalResult,
    evaluate,
    load_checkpoint,
    model_from_checkpoint,
    save_checkpoint,
    train,
)

__version__ = "0.1.0"

__all__ = [
    "AdamOptimizer",
    "AutodiffError",
    "Checkpoint",
    "ConfigError",
    "Conversation",
    "ConversationEmotionRecognizer",
    "Dataset",
    "DatasetFormatError",
    "EmotionModel",
    "EvalResult",
    "NonFiniteError",
    "ParamStore",
    "ShapeMismatchError",
    "Tape",
    "Tensor",
    "TrainConfig",
    "Utterance",
    "confusion_matrix",
    "cosine_sim",
    "evaluate",
    "finite_diff_check",
    "load_checkpoint",
    "load_dataset",
    "model_from_checkpoint",
    "per_class_f1",
    "save_checkpoint",
    "split_dataset",
    "symmetric_eig",
    "synth_generate",
    "train",
    "weighted_f1",
    "write_dataset",
]
