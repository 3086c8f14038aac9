"""Variational self-attention sentence encoder for stance detection."""

from .data import Dataset, StanceExample, class_stats, load_fnc1, make_synthetic, make_synthetic_splits
from .embeddings import EmbeddingMatrix, SentenceBatch, Vocabulary, embed, load_pretrained, tokenize
from .estimator import MeanEmbeddingClassifier, SelfAttentionClassifier, VSAMClassifier
from .metrics import MetricsReport, evaluate
from .model import LABELS, ElboReport, ModelShape, VsamParameters
from .tensor import Tape, Tensor, backward, finite_difference_check
from .variational import DiagonalGaussian, NoiseDraw, draw_noise, kl_divergence, log_density, reparameterize

__version__ = "0.1.0"

__all__ = [
    "LABELS",
    "Dataset",
    "DiagonalGaussian",
    "ElboReport",
    "EmbeddingMatrix",
    "MeanEmbeddingClassifier",
    "MetricsReport",
    "ModelShape",
    "NoiseDraw",
    "SelfAttentionClassifier",
    "SentenceBatch",
    "StanceExample",
    "Tape",
    "Tensor",
    "VSAMClassifier",
    "Vocabulary",
    "VsamParameters",
    "backward",
    "class_stats",
    "draw_noise",
    "embed",
    "evaluate",
    "finite_difference_check",
    "kl_divergence",
    "load_fnc1",
    "load_pretrained",
    "log_density",
    "make_synthetic",
    "make_synthetic_splits",
    "reparameterize",
    "tokenize",
]
