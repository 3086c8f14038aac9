"""Run configuration: built-in defaults < config file < command-line flags.

Config files are flat ``key = value`` text, one entry per line, ``#`` starts
a comment.  Keys are the :class:`RunConfig` field names.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, fields
from pathlib import Path
from typing import Optional

from .exceptions import ConfigError

BASELINES = ("vsam", "det-attn", "mean")


@dataclass
class RunConfig:
    # model and training
    baseline: str = "vsam"
    seed: int = 0
    learning_rate: float = 1e-3
    epochs: int = 10
    batch_size: int = 32
    n_samples: int = 1
    latent_dim: int = 8
    hidden: int = 32
    proj: int = 32
    embedding_dim: int = 32
    n_max_headline: int = 32
    n_max_body: int = 128
    kl_warmup: Optional[int] = None
    class_weight: Optional[str] = None
    fine_tune_embeddings: bool = False
    # data
    embeddings: Optional[str] = None
    stances: Optional[str] = None
    bodies: Optional[str] = None
    test_stances: Optional[str] = None
    test_bodies: Optional[str] = None
    synthetic: bool = False
    synthetic_train: int = 2000
    synthetic_test: int = 500
    vocab_size: int = 64
    split: Optional[str] = None
    # outputs and prediction
    checkpoint: Optional[str] = None
    out: Optional[str] = None
    predict_mode: str = "mean"
    samples: int = 1
    headline: Optional[str] = None
    body: Optional[str] = None

    def validate(self) -> None:
        if self.baseline not in BASELINES:
            raise ConfigError(f"baseline must be one of {BASELINES}, got {self.baseline!r}")
        if self.predict_mode not in ("mean", "sample"):
            raise ConfigError(f"predict_mode must be 'mean' or 'sample', got {self.predict_mode!r}")
        if self.class_weight not in (None, "balanced"):
            raise ConfigError(f"class_weight must be empty or 'balanced', got {self.class_weight!r}")
        if self.split not in (None, "train", "test"):
            raise ConfigError(f"split must be 'train' or 'test', got {self.split!r}")
        for name in ("learning_rate", "epochs", "batch_size", "n_samples", "latent_dim", "hidden", "proj",
                     "embedding_dim", "n_max_headline", "n_max_body", "synthetic_train", "samples"):
            if getattr(self, name) <= 0:
                raise ConfigError(f"{name} must be positive, got {getattr(self, name)}")
        if self.synthetic_test < 0 or self.vocab_size < 8:
            raise ConfigError("synthetic_test must be >= 0 and vocab_size >= 8")
        if self.kl_warmup is not None and self.kl_warmup < 0:
            raise ConfigError("kl_warmup must be >= 0")
        if self.seed < 0 or self.seed >= 2**64:
            raise ConfigError("seed must be an unsigned 64-bit integer")
        if self.synthetic and (self.stances or self.bodies):
            raise ConfigError("--synthetic and --stances/--bodies are mutually exclusive")

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def to_text(self) -> str:
        lines = []
        for f in fields(self):
            v = getattr(self, f.name)
            lines.append(f"{f.name} = {'' if v is None else _format(v)}")
        return "\n".join(lines) + "\n"


_FIELDS = {f.name: f for f in fields(RunConfig)}


def _format(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return repr(v)
    return str(v)


def coerce(key: str, raw):
    """Convert a raw string (or already-typed value) to the type of field ``key``."""
    if key not in _FIELDS:
        raise ConfigError(f"unknown config key {key!r}")
    if not isinstance(raw, str):
        return raw
    text = raw.strip()
    ftype = str(_FIELDS[key].type)
    optional = ftype.startswith("Optional")
    if text == "" or (optional and text.lower() == "none"):
        if optional:
            return None
        raise ConfigError(f"{key} needs a value")
    try:
        if "bool" in ftype:
            low = text.lower()
            if low in ("1", "true", "yes", "on"):
                return True
            if low in ("0", "false", "no", "off"):
                return False
            raise ValueError(text)
        if "int" in ftype:
            return int(text)
        if "float" in ftype:
            return float(text)
    except ValueError:
        raise ConfigError(f"bad value for {key}: {raw!r}") from None
    return text


def read_config_file(path) -> dict:
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file not found: {path}")
    out = {}
    for lineno, line in enumerate(path.read_text(encoding="utf-8").splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{lineno}: expected 'key = value'")
        key, _, value = line.partition("=")
        key = key.strip()
        out[key] = coerce(key, value)
    return out


def build_config(layers: list[dict]) -> RunConfig:
    """Merge dictionaries from lowest to highest precedence onto the defaults."""
    merged: dict = {}
    for layer in layers:
        for k, v in layer.items():
            merged[k] = coerce(k, v)
    cfg = RunConfig(**merged)
    cfg.validate()
    return cfg
