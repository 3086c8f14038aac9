"""Per-class accuracy (recall), micro-F1 and confusion matrices."""

from __future__ import annotations

import json
from dataclasses import dataclass
from fractions import Fraction
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .exceptions import ContractError
from .model import LABELS

_INDEX = {name: i for i, name in enumerate(LABELS)}


def _as_indices(values: Sequence) -> np.ndarray:
    out = []
    for v in values:
        if isinstance(v, str):
            if v not in _INDEX:
                raise ContractError(f"unknown label {v!r}")
            out.append(_INDEX[v])
        else:
            iv = int(v)
            if not 0 <= iv < len(LABELS):
                raise ContractError(f"class index out of range: {v}")
            out.append(iv)
    return np.asarray(out, dtype=np.int64)


def confusion_matrix(predictions: Sequence, gold: Sequence) -> np.ndarray:
    """Counts with gold classes on rows and predicted classes on columns."""
    p, g = _as_indices(predictions), _as_indices(gold)
    cm = np.zeros((len(LABELS), len(LABELS)), dtype=np.int64)
    np.add.at(cm, (g, p), 1)
    return cm


def micro_f1_fraction(cm: np.ndarray) -> Fraction:
    tp = int(np.trace(cm))
    fp = int(cm.sum(axis=0).sum()) - tp
    fn = int(cm.sum(axis=1).sum()) - tp
    return Fraction(2 * tp, 2 * tp + fp + fn)


@dataclass(frozen=True)
class MetricsReport:
    """Evaluation summary; ``per_class_accuracy`` is None for classes absent from gold."""

    per_class_accuracy: dict[str, Optional[float]]
    micro_f1: float
    confusion: tuple[tuple[int, ...], ...]
    n_examples: int

    @property
    def gold_counts(self) -> dict[str, int]:
        return {name: sum(self.confusion[i]) for i, name in enumerate(LABELS)}

    def to_dict(self) -> dict:
        return {
            "n_examples": self.n_examples,
            "micro_f1": self.micro_f1,
            "per_class_accuracy": dict(self.per_class_accuracy),
            "confusion": [list(r) for r in self.confusion],
            "labels": list(LABELS),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "MetricsReport":
        return cls(
            per_class_accuracy={k: (None if v is None else float(v)) for k, v in d["per_class_accuracy"].items()},
            micro_f1=float(d["micro_f1"]),
            confusion=tuple(tuple(int(x) for x in r) for r in d["confusion"]),
            n_examples=int(d["n_examples"]),
        )

    def to_text(self) -> str:
        """Flat ``key=value`` lines; floats use repr so they parse back exactly."""
        lines = [f"n_examples={self.n_examples}", f"micro_f1={self.micro_f1!r}"]
        for name in LABELS:
            acc = self.per_class_accuracy[name]
            lines.append(f"accuracy.{name}={'undefined' if acc is None else repr(acc)}")
        for i, gname in enumerate(LABELS):
            for j, pname in enumerate(LABELS):
                lines.append(f"confusion.{gname}.{pname}={self.confusion[i][j]}")
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text: str) -> "MetricsReport":
        kv = {}
        for line in text.splitlines():
            if line.strip():
                k, _, v = line.partition("=")
                kv[k.strip()] = v.strip()
        acc = {n: (None if kv[f"accuracy.{n}"] == "undefined" else float(kv[f"accuracy.{n}"])) for n in LABELS}
        cm = tuple(tuple(int(kv[f"confusion.{g}.{p}"]) for p in LABELS) for g in LABELS)
        return cls(acc, float(kv["micro_f1"]), cm, int(kv["n_examples"]))

    def save(self, path) -> tuple[Path, Path]:
        """Write ``<stem>.txt`` and ``<stem>.json`` next to ``path``."""
        path = Path(path)
        txt, js = path.with_suffix(".txt"), path.with_suffix(".json")
        txt.write_text(self.to_text(), encoding="utf-8")
        js.write_text(json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n", encoding="utf-8")
        return txt, js


def evaluate(predictions: Sequence, gold: Sequence) -> MetricsReport:
    """Per-class recall (%) and micro-F1 (%) of single-label predictions."""
    if len(predictions) != len(gold):
        raise ContractError(f"{len(predictions)} predictions for {len(gold)} gold labels")
    if len(gold) == 0:
        raise ContractError("nothing to evaluate")
    cm = confusion_matrix(predictions, gold)
    acc: dict[str, Optional[float]] = {}
    for i, name in enumerate(LABELS):
        support = int(cm[i].sum())
        acc[name] = None if support == 0 else float(100 * Fraction(int(cm[i, i]), support))
    micro = float(100 * micro_f1_fraction(cm))
    return MetricsReport(acc, micro, tuple(tuple(int(x) for x in r) for r in cm), int(cm.sum()))
