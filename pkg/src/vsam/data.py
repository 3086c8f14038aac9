"""FNC-1 ingestion, class statistics and a synthetic stance dataset."""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field
from decimal import ROUND_HALF_UP, Decimal
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .embeddings import EmbeddingMatrix, Vocabulary, from_vectors, tokenize
from .exceptions import ContractError, EmptyDatasetError
from .model import LABELS

logger = logging.getLogger(__name__)

LABEL_INDEX = {name: i for i, name in enumerate(LABELS)}


@dataclass(frozen=True)
class StanceExample:
    headline: tuple[str, ...]
    body: tuple[str, ...]
    stance: str
    body_id: int

    def __post_init__(self):
        if self.stance not in LABEL_INDEX:
            raise ContractError(f"unknown stance {self.stance!r}")
        if not self.headline or not self.body:
            raise ContractError("headline and body must be non-empty")

    @property
    def label(self) -> int:
        return LABEL_INDEX[self.stance]


@dataclass
class Dataset:
    examples: list[StanceExample]
    split: str = "train"
    rejected_stance: int = 0
    unresolved_body: int = 0
    empty_text: int = 0
    meta: dict = field(default_factory=dict, compare=False, repr=False)

    def __len__(self) -> int:
        return len(self.examples)

    def __iter__(self):
        return iter(self.examples)

    @property
    def labels(self) -> np.ndarray:
        return np.array([ex.label for ex in self.examples], dtype=np.int64)

    def pairs(self) -> list[tuple[tuple[str, ...], tuple[str, ...]]]:
        return [(ex.headline, ex.body) for ex in self.examples]

    def counts(self) -> dict[str, int]:
        out = {name: 0 for name in LABELS}
        for ex in self.examples:
            out[ex.stance] += 1
        return out


def _read_rows(path) -> list[dict]:
    with open(Path(path), encoding="utf-8", errors="replace", newline="") as fh:
        return list(csv.DictReader(fh))


def load_fnc1(stances_file, bodies_file, split: str = "train") -> Dataset:
    """Join an FNC-1 stances file with its bodies file on ``Body ID``.

    Rows with an unknown stance, an unresolvable body id or text that
    tokenizes to nothing are skipped and counted on the returned dataset.
    Accepted rows keep the stances-file order.
    """
    bodies: dict[int, tuple[str, ...]] = {}
    for row in _read_rows(bodies_file):
        try:
            bodies[int(row["Body ID"])] = tuple(tokenize(row.get("articleBody") or ""))
        except (KeyError, TypeError, ValueError):
            continue

    examples: list[StanceExample] = []
    rejected = unresolved = empty = 0
    for row in _read_rows(stances_file):
        stance = (row.get("Stance") or "").strip().lower()
        if stance not in LABEL_INDEX:
            rejected += 1
            continue
        try:
            body_id = int(row["Body ID"])
            body = bodies[body_id]
        except (KeyError, TypeError, ValueError):
            unresolved += 1
            continue
        headline = tuple(tokenize(row.get("Headline") or ""))
        if not headline or not body:
            empty += 1
            continue
        examples.append(StanceExample(headline, body, stance, body_id))

    if rejected or unresolved or empty:
        logger.info("%s: skipped %d bad stance, %d unresolved body, %d empty rows",
                    stances_file, rejected, unresolved, empty)
    if not examples:
        raise EmptyDatasetError(f"no valid rows in {stances_file}")
    return Dataset(examples, split, rejected, unresolved, empty)


@dataclass(frozen=True)
class ClassStats:
    counts: dict[str, int]
    percentages: dict[str, Decimal]
    total: int


def round_half_up(value, places: int = 2) -> Decimal:
    q = Decimal(1).scaleb(-places)
    return Decimal(value).quantize(q, rounding=ROUND_HALF_UP)


def class_stats(d: Dataset) -> ClassStats:
    """Per-class counts and percentages (half-up, 2 decimals)."""
    if len(d) == 0:
        raise ContractError("class_stats of an empty dataset")
    counts = d.counts()
    total = len(d)
    pct = {k: round_half_up(Decimal(100 * v) / Decimal(total)) for k, v in counts.items()}
    return ClassStats(counts, pct, total)


# -- synthetic data --------------------------------------------------------

# Label for (headline topic, body topic).  The table is chosen so that a
# linear classifier over separate per-side features can represent it.
_A, _DIS, _DSC, _U = (LABEL_INDEX[k] for k in LABELS)
SYNTHETIC_RULE = np.array([
    [_DSC, _U, _U, _U],
    [_A, _DSC, _U, _U],
    [_A, _A, _DSC, _U],
    [_A, _DIS, _DIS, _DSC],
])

DEFAULT_PROPORTIONS = {"agree": 0.20, "disagree": 0.10, "discuss": 0.25, "unrelated": 0.45}

N_TOPICS = 4
LEAD = 3  # topic words sit in the first LEAD positions


def synthetic_label(head_topic: int, body_topic: int) -> int:
    return int(SYNTHETIC_RULE[head_topic, body_topic])


def synthetic_vocabulary(vocab_size: int) -> tuple[list[list[str]], list[str]]:
    """Topic word sets and filler words for a vocabulary of ``vocab_size`` tokens."""
    if vocab_size < 8:
        raise ContractError(f"vocab_size must be >= 8, got {vocab_size}")
    per_topic = max(1, vocab_size // 8)
    topics = [[f"t{t}w{j}" for j in range(per_topic)] for t in range(N_TOPICS)]
    fillers = [f"f{j}" for j in range(vocab_size - N_TOPICS * per_topic)]
    return topics, fillers


def _sentence(rng, topic: int, topics, fillers, length: int, n_distract: int) -> list[str]:
    lead = [topics[topic][i] for i in rng.integers(len(topics[topic]), size=LEAD)]
    other = (topic + 1 + int(rng.integers(N_TOPICS - 1))) % N_TOPICS
    tail = [fillers[i] for i in rng.integers(len(fillers), size=length - LEAD)]
    for pos in rng.choice(len(tail), size=min(n_distract, len(tail)), replace=False):
        tail[pos] = topics[other][rng.integers(len(topics[other]))]
    return lead + tail


def sentence_topic(tokens: Sequence[str]) -> int:
    """Recover the generating topic from the lead positions of a synthetic sentence."""
    votes = np.zeros(N_TOPICS, dtype=int)
    for tok in tokens[:LEAD]:
        if tok.startswith("t") and "w" in tok:
            votes[int(tok[1:tok.index("w")])] += 1
    return int(votes.argmax())


def make_synthetic(n_examples: int, vocab_size: int = 64, seed: int = 0,
                   proportions: Optional[dict[str, float]] = None,
                   headline_length: tuple[int, int] = (6, 10),
                   body_length: tuple[int, int] = (10, 16),
                   distractors: tuple[int, int] = (2, 3),
                   split: str = "train") -> Dataset:
    """Seeded (headline, body) pairs whose stance is fixed by their topics.

    Each sentence opens with three words of its own topic, followed by
    filler words among which a few words of one other topic are scattered.
    The stance is ``SYNTHETIC_RULE[headline topic, body topic]`` and classes
    are drawn with the given target ``proportions``.
    """
    if n_examples < 4:
        raise ContractError(f"n_examples must be >= 4, got {n_examples}")
    topics, fillers = synthetic_vocabulary(vocab_size)
    props = dict(DEFAULT_PROPORTIONS if proportions is None else proportions)
    weights = np.array([props[k] for k in LABELS], dtype=float)
    weights = weights / weights.sum()
    cells = {c: [(h, b) for h in range(N_TOPICS) for b in range(N_TOPICS) if SYNTHETIC_RULE[h, b] == c]
             for c in range(len(LABELS))}
    rng = np.random.default_rng(seed)
    examples = []
    for i in range(n_examples):
        c = int(rng.choice(len(LABELS), p=weights))
        h_topic, b_topic = cells[c][rng.integers(len(cells[c]))]
        head = _sentence(rng, h_topic, topics, fillers, int(rng.integers(headline_length[0], headline_length[1] + 1)),
                         int(rng.integers(distractors[0], distractors[1] + 1)))
        body = _sentence(rng, b_topic, topics, fillers, int(rng.integers(body_length[0], body_length[1] + 1)),
                         int(rng.integers(distractors[0], distractors[1] + 1)))
        examples.append(StanceExample(tuple(head), tuple(body), LABELS[c], i))
    meta = {"vocab_size": vocab_size, "seed": seed, "proportions": props,
            "tokens": [w for ws in topics for w in ws] + fillers}
    return Dataset(examples, split, meta=meta)


def make_synthetic_splits(n_train: int, n_test: int, vocab_size: int = 64, seed: int = 0, **kwargs) -> tuple[Dataset, Dataset]:
    """One synthetic draw cut into a train and a test split."""
    full = make_synthetic(n_train + n_test, vocab_size, seed, **kwargs)
    train = Dataset(full.examples[:n_train], "train", meta=full.meta)
    test = Dataset(full.examples[n_train:], "test", meta=full.meta)
    return train, test


def synthetic_embeddings(vocab_size: int, dim: int, seed: int, spread: float = 0.5) -> tuple[Vocabulary, EmbeddingMatrix]:
    """Stand-in for pretrained vectors over the synthetic vocabulary.

    Words of one topic scatter around a shared random centre (relative
    spread ``spread``), the way related words cluster in pretrained
    embeddings; filler words are independent.  Entries have scale
    ``1/sqrt(dim)``.
    """
    topics, fillers = synthetic_vocabulary(vocab_size)
    rng = np.random.default_rng(seed)
    centres = rng.standard_normal((N_TOPICS, dim)) / np.sqrt(dim)
    tokens, vectors = [], []
    for t, words in enumerate(topics):
        for w in words:
            tokens.append(w)
            vectors.append(centres[t] + spread * rng.standard_normal(dim) / np.sqrt(dim))
    for w in fillers:
        tokens.append(w)
        vectors.append(rng.standard_normal(dim) / np.sqrt(dim))
    return from_vectors(tokens, vectors)
