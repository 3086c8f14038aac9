"""Input checks shared by the estimators."""

from __future__ import annotations

from typing import Sequence

import numpy as np

from .data import Dataset, StanceExample
from .embeddings import tokenize
from .exceptions import ContractError, DegenerateInputError
from .model import LABELS

_INDEX = {name: i for i, name in enumerate(LABELS)}


def _tokens(side) -> tuple[str, ...]:
    if isinstance(side, str):
        return tuple(tokenize(side))
    return tuple(str(t) for t in side)


def check_pairs(X) -> list[tuple[tuple[str, ...], tuple[str, ...]]]:
    """Normalise ``X`` to a list of (headline tokens, body tokens).

    Accepts a :class:`Dataset`, a sequence of :class:`StanceExample`, or a
    sequence of (headline, body) pairs where each side is raw text or a
    token sequence.
    """
    if isinstance(X, Dataset):
        X = X.examples
    pairs = []
    for i, item in enumerate(X):
        if isinstance(item, StanceExample):
            head, body = item.headline, item.body
        else:
            try:
                head, body = item
            except (TypeError, ValueError):
                raise ContractError(f"sample {i} is not a (headline, body) pair") from None
            head, body = _tokens(head), _tokens(body)
        if not head or not body:
            raise DegenerateInputError(f"sample {i} has an empty headline or body")
        pairs.append((head, body))
    if not pairs:
        raise DegenerateInputError("no samples")
    return pairs


def check_labels(y, n_samples: int) -> np.ndarray:
    """Stance labels (names or indices) as an int array of class indices."""
    if isinstance(y, Dataset):
        y = y.labels
    out = np.empty(len(y), dtype=np.int64)
    for i, v in enumerate(y):
        if isinstance(v, (str, np.str_)):
            key = str(v).lower()
            if key not in _INDEX:
                raise ContractError(f"unknown stance label {v!r}")
            out[i] = _INDEX[key]
        else:
            iv = int(v)
            if not 0 <= iv < len(LABELS):
                raise ContractError(f"class index {v} out of range")
            out[i] = iv
    if len(out) != n_samples:
        raise ContractError(f"found {n_samples} samples but {len(out)} labels")
    return out


def check_positive(**values) -> None:
    for name, v in values.items():
        if v is None or v <= 0:
            raise ContractError(f"{name} must be positive, got {v}")


def balanced_class_weights(y: np.ndarray, n_classes: int) -> np.ndarray:
    """Per-class weights ``n / (n_classes * count)``; absent classes get 0."""
    counts = np.bincount(y, minlength=n_classes).astype(float)
    w = np.zeros(n_classes)
    present = counts > 0
    w[present] = len(y) / (n_classes * counts[present])
    return w


def sample_weights_for(y: np.ndarray, class_weight, n_classes: int):
    if class_weight is None:
        return None
    if class_weight == "balanced":
        return balanced_class_weights(y, n_classes)[y]
    if isinstance(class_weight, dict):
        w = np.ones(n_classes)
        for k, v in class_weight.items():
            w[_INDEX[k] if isinstance(k, str) else int(k)] = float(v)
        return w[y]
    raise ContractError(f"class_weight must be None, 'balanced' or a dict, got {class_weight!r}")


def tokens_of(pairs: Sequence) -> list[str]:
    """Distinct tokens in first-seen order."""
    seen: dict[str, None] = {}
    for head, body in pairs:
        for t in head:
            seen.setdefault(t, None)
        for t in body:
            seen.setdefault(t, None)
    return list(seen)
