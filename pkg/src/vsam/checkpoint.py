"""Single-file JSON checkpoints of fitted classifiers.

Layout::

    {"format_version": 1, "model": "vsam", "estimator_params": {...},
     "run_config": {...}, "vocabulary": [...],
     "parameters": [{"name", "shape", "data"}, ...]}

``data`` is the base64 of the row-major little-endian float64 payload.  The
embedding matrix is stored as the parameter ``embedding.weight``.
"""

from __future__ import annotations

import base64
import json
from pathlib import Path
from typing import Optional

import numpy as np

from .embeddings import PAD, UNK, EmbeddingMatrix, Vocabulary
from .estimator import ESTIMATORS
from .exceptions import ConfigError
from .model import LABELS, VsamParameters
from .tensor import Tensor

FORMAT_VERSION = 1


def _encode_array(a: np.ndarray) -> dict:
    a = np.ascontiguousarray(a, dtype="<f8")
    return {"shape": list(a.shape), "data": base64.b64encode(a.tobytes()).decode("ascii")}


def _decode_array(entry: dict) -> np.ndarray:
    raw = base64.b64decode(entry["data"])
    shape = tuple(int(n) for n in entry["shape"])
    arr = np.frombuffer(raw, dtype="<f8").astype(np.float64)
    if arr.size != int(np.prod(shape)):
        raise ConfigError(f"payload of {entry.get('name')} has {arr.size} values for shape {shape}")
    return arr.reshape(shape)


def checkpoint_dict(estimator, run_config: Optional[dict] = None) -> dict:
    params = {k: v for k, v in estimator.get_params().items() if k != "embeddings"}
    entries = [{"name": "embedding.weight", **_encode_array(estimator.embeddings_.weight)}]
    for name, t in estimator.params_.items():
        entries.append({"name": name, **_encode_array(t.data)})
    return {
        "format_version": FORMAT_VERSION,
        "model": estimator.params_.kind,
        "labels": list(LABELS),
        "estimator_params": params,
        "run_config": dict(run_config or {}),
        "vocabulary": estimator.vocabulary_.tokens[2:],
        "parameters": entries,
    }


def save_checkpoint(path, estimator, run_config: Optional[dict] = None) -> Path:
    """Write the checkpoint atomically (temp file + rename)."""
    path = Path(path)
    text = json.dumps(checkpoint_dict(estimator, run_config), sort_keys=True, indent=1) + "\n"
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text(text, encoding="utf-8")
    tmp.replace(path)
    return path


def load_checkpoint(path):
    """Rebuild a fitted estimator; every tensor shape is validated against the stored config."""
    path = Path(path)
    try:
        doc = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path} is not a checkpoint: {exc}") from None
    if doc.get("format_version") != FORMAT_VERSION:
        raise ConfigError(f"unsupported checkpoint format {doc.get('format_version')!r}")
    kind = doc.get("model")
    if kind not in ESTIMATORS:
        raise ConfigError(f"unknown model kind {kind!r}")

    est = ESTIMATORS[kind](**doc["estimator_params"])
    arrays = {e["name"]: _decode_array(e) for e in doc["parameters"]}
    if "embedding.weight" not in arrays:
        raise ConfigError("checkpoint has no embedding.weight")
    tokens = doc["vocabulary"]
    if PAD in tokens or UNK in tokens:
        raise ConfigError("vocabulary must not list reserved tokens")
    vocab = Vocabulary(tokens)
    weight = arrays.pop("embedding.weight")
    if weight.ndim != 2 or weight.shape[1] != len(vocab):
        raise ConfigError(f"embedding.weight shape {weight.shape} does not match vocabulary size {len(vocab)}")

    shape = est._shape(weight.shape[0])
    try:
        params = VsamParameters(shape, {k: Tensor(v) for k, v in arrays.items()}, kind)
    except ValueError as exc:
        raise ConfigError(f"checkpoint does not match its configuration: {exc}") from None
    est.vocabulary_ = vocab
    est.embeddings_ = EmbeddingMatrix(weight, frozen=not est.fine_tune_embeddings)
    est.params_ = params
    est.classes_ = np.array(LABELS)
    est.history_ = []
    est.run_config_ = doc.get("run_config", {})
    return est
