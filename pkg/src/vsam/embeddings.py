"""Vocabulary, pretrained word vectors and sentence embedding matrices."""

from __future__ import annotations

import logging
import string
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Optional, Sequence

import numpy as np

from .exceptions import ContractError, DegenerateInputError, DimensionError, EmptyEmbeddingError

logger = logging.getLogger(__name__)

PAD = "<pad>"
UNK = "<unk>"
PAD_INDEX = 0
UNK_INDEX = 1

_PUNCT = string.punctuation


def tokenize(text: str) -> list[str]:
    """Lowercase, split on whitespace and strip surrounding ASCII punctuation.

    >>> tokenize("The cat, sat.")
    ['the', 'cat', 'sat']
    """
    tokens = []
    for raw in text.lower().split():
        tok = raw.strip(_PUNCT)
        if tok:
            tokens.append(tok)
    return tokens


class Vocabulary:
    """Token <-> index map with reserved PAD (0) and UNK (1) entries."""

    def __init__(self, tokens: Iterable[str] = ()):
        self.tokens: list[str] = [PAD, UNK]
        self.index: dict[str, int] = {PAD: PAD_INDEX, UNK: UNK_INDEX}
        for tok in tokens:
            self.add(tok)

    def add(self, token: str) -> int:
        if token in self.index:
            return self.index[token]
        self.index[token] = len(self.tokens)
        self.tokens.append(token)
        return self.index[token]

    def lookup(self, token: str) -> int:
        return self.index.get(token, UNK_INDEX)

    def encode(self, tokens: Sequence[str]) -> list[int]:
        return [self.lookup(t) for t in tokens]

    def __len__(self) -> int:
        return len(self.tokens)

    def __contains__(self, token: str) -> bool:
        return token in self.index

    def __eq__(self, other) -> bool:
        return isinstance(other, Vocabulary) and self.tokens == other.tokens


@dataclass
class EmbeddingMatrix:
    """Word vectors stored column-wise, ``weight`` has shape (D, N).

    Column ``PAD_INDEX`` is all zeros and is never updated.
    """

    weight: np.ndarray
    frozen: bool = True
    skipped_lines: int = field(default=0, compare=False)

    def __post_init__(self):
        self.weight = np.asarray(self.weight, dtype=np.float64)
        if self.weight.ndim != 2 or self.weight.shape[1] < 2:
            raise DimensionError(f"embedding weight must be (D, N>=2), got {self.weight.shape}")
        if not np.isfinite(self.weight).all():
            raise ContractError("embedding weight has non-finite entries")
        self.weight[:, PAD_INDEX] = 0.0

    @property
    def dim(self) -> int:
        return self.weight.shape[0]

    @property
    def n_tokens(self) -> int:
        return self.weight.shape[1]

    def column(self, index: int) -> np.ndarray:
        return self.weight[:, index].copy()


def from_vectors(tokens: list[str], vectors: list[np.ndarray], skipped: int = 0) -> tuple[Vocabulary, EmbeddingMatrix]:
    """Vocabulary and matrix for known vectors; UNK is their mean, PAD is zero."""
    vocab = Vocabulary(tokens)
    stacked = np.stack(vectors, axis=1)
    weight = np.zeros((stacked.shape[0], len(vocab)))
    weight[:, UNK_INDEX] = stacked.mean(axis=1)
    weight[:, 2:] = stacked
    return vocab, EmbeddingMatrix(weight, frozen=True, skipped_lines=skipped)


def load_pretrained(path, expected_dim: int) -> tuple[Vocabulary, EmbeddingMatrix]:
    """Read a plain-text ``token f1 ... fD`` embedding file.

    Lines with the wrong number of fields, unparseable or non-finite values,
    or a duplicate token are skipped and counted in
    ``EmbeddingMatrix.skipped_lines``.  A word2vec-style header (first field
    an integer, not a full record) is ignored.  The UNK vector is the mean of
    all loaded vectors.
    """
    tokens: list[str] = []
    vectors: list[np.ndarray] = []
    seen: set[str] = set()
    skipped = 0
    with open(Path(path), encoding="utf-8") as fh:
        for line in fh:
            fields = line.rstrip("\n").split()
            if not fields:
                continue
            if len(fields) != expected_dim + 1:
                if _is_int(fields[0]):
                    continue
                skipped += 1
                continue
            tok = fields[0]
            try:
                vec = np.array([float(v) for v in fields[1:]])
            except ValueError:
                skipped += 1
                continue
            if not np.isfinite(vec).all() or tok in seen or tok in (PAD, UNK):
                skipped += 1
                continue
            seen.add(tok)
            tokens.append(tok)
            vectors.append(vec)
    if not vectors:
        raise EmptyEmbeddingError(f"no parseable {expected_dim}-dimensional vectors in {path}")
    if skipped:
        logger.info("skipped %d malformed embedding lines in %s", skipped, path)
    return from_vectors(tokens, vectors, skipped)


def _is_int(s: str) -> bool:
    try:
        int(s)
    except ValueError:
        return False
    return True


def random_embeddings(tokens: Sequence[str], dim: int, seed: int) -> tuple[Vocabulary, EmbeddingMatrix]:
    """Seeded Gaussian vectors (std ``1/sqrt(dim)``) for a known token list."""
    if dim < 1 or not tokens:
        raise ContractError("random_embeddings needs dim >= 1 and at least one token")
    rng = np.random.default_rng(seed)
    mat = rng.standard_normal((dim, len(tokens))) / np.sqrt(dim)
    return from_vectors(list(tokens), list(mat.T))


@dataclass
class SentenceBatch:
    """Padded token indices, validity mask and embedded matrices.

    ``indices`` and ``mask`` are (batch, n_max); ``H`` is (batch, D, n_max)
    with all-zero columns at padded positions.
    """

    indices: np.ndarray
    mask: np.ndarray
    H: np.ndarray

    def __len__(self) -> int:
        return self.indices.shape[0]

    @property
    def n_max(self) -> int:
        return self.indices.shape[1]


def encode_padded(token_lists: Sequence[Sequence[str]], vocab: Vocabulary, n_max: int) -> tuple[np.ndarray, np.ndarray]:
    """Index matrix and mask for a list of token lists, truncating to ``n_max``."""
    if n_max < 1:
        raise ContractError("n_max must be positive")
    idx = np.full((len(token_lists), n_max), PAD_INDEX, dtype=np.int64)
    for i, toks in enumerate(token_lists):
        if len(toks) == 0:
            raise DegenerateInputError(f"sentence {i} has no tokens")
        ids = vocab.encode(toks[:n_max])
        idx[i, : len(ids)] = ids
    mask = np.zeros(idx.shape, dtype=bool)
    for i, toks in enumerate(token_lists):
        mask[i, : min(len(toks), n_max)] = True
    return idx, mask


def embed_batch(token_lists: Sequence[Sequence[str]], vocab: Vocabulary, emb: EmbeddingMatrix, n_max: int) -> SentenceBatch:
    idx, mask = encode_padded(token_lists, vocab, n_max)
    H = np.moveaxis(emb.weight[:, idx], 0, -2)
    return SentenceBatch(idx, mask, H)


def embed(tokens: Sequence[str], vocab: Vocabulary, emb: EmbeddingMatrix, n_max: int) -> SentenceBatch:
    """Embed one sentence as a single-row :class:`SentenceBatch`."""
    if len(tokens) == 0:
        raise DegenerateInputError("cannot embed an empty token list")
    return embed_batch([tokens], vocab, emb, n_max)
