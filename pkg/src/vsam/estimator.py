"""scikit-learn style classifiers for (headline, body) stance pairs.

``X`` is anything :func:`~vsam.validation.check_pairs` accepts and ``y``
holds stance names or class indices.  Predictions are stance names.
"""

from __future__ import annotations

import math
from typing import Callable, Optional

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin
from sklearn.utils.validation import check_is_fitted

from . import model as M
from .embeddings import EmbeddingMatrix, Vocabulary, encode_padded, random_embeddings
from .exceptions import ContractError
from .metrics import evaluate
from .model import LABELS, Adam, ModelShape, PairBatch, VsamParameters
from .tensor import Tensor
from .validation import check_labels, check_pairs, check_positive, sample_weights_for, tokens_of

_PREDICT_CHUNK = 512


class _StanceClassifier(ClassifierMixin, BaseEstimator):
    _kind = "vsam"

    def _shape(self, dim: int) -> ModelShape:
        return ModelShape(
            embedding_dim=dim,
            hidden=getattr(self, "hidden", 1),
            proj=getattr(self, "proj", 1),
            latent_dim=getattr(self, "latent_dim", 1),
            n_max=max(self.n_max_headline, self.n_max_body),
            n_classes=len(LABELS),
        )

    def _resolve_embeddings(self, pairs, rng) -> tuple[Vocabulary, EmbeddingMatrix]:
        if self.embeddings is not None:
            vocab, emb = self.embeddings
            return vocab, EmbeddingMatrix(emb.weight.copy(), frozen=emb.frozen)
        # no pretrained vectors: seeded random ones over the training tokens
        return random_embeddings(tokens_of(pairs), self.embedding_dim, int(rng.integers(2**63)))

    def _encode(self, pairs, labels=None, weights=None) -> PairBatch:
        width = max(self.n_max_headline, self.n_max_body)
        ih, mh = encode_padded([p[0] for p in pairs], self.vocabulary_, width)
        ib, mb = encode_padded([p[1] for p in pairs], self.vocabulary_, width)
        mh[:, self.n_max_headline:] = False
        ih[~mh] = 0
        mb[:, self.n_max_body:] = False
        ib[~mb] = 0
        return PairBatch(ih, mh, ib, mb, labels, weights)

    def _check_common(self) -> None:
        check_positive(learning_rate=self.learning_rate, epochs=self.epochs, batch_size=self.batch_size,
                       n_max_headline=self.n_max_headline, n_max_body=self.n_max_body,
                       embedding_dim=self.embedding_dim)

    def fit(self, X, y, epoch_callback: Optional[Callable[["_StanceClassifier", dict], None]] = None):
        """Train from scratch.  ``epoch_callback(self, record)`` runs after every epoch."""
        self._check_common()
        pairs = check_pairs(X)
        labels = check_labels(y, len(pairs))
        rng = np.random.default_rng(self.random_state)
        self.vocabulary_, self.embeddings_ = self._resolve_embeddings(pairs, rng)
        self.embeddings_.frozen = not self.fine_tune_embeddings
        self.classes_ = np.array(LABELS)
        self.params_ = VsamParameters.initialize(self._shape(self.embeddings_.dim), rng, self._kind)
        self.history_ = []

        emb = Tensor(self.embeddings_.weight, requires_grad=self.fine_tune_embeddings, name="embedding.weight")
        tensors = dict(self.params_.tensors)
        if self.fine_tune_embeddings:
            tensors["embedding.weight"] = emb
        optimizer = Adam(tensors, lr=self.learning_rate)
        full = self._encode(pairs, labels, sample_weights_for(labels, self.class_weight, len(LABELS)))

        n = len(pairs)
        steps_per_epoch = math.ceil(n / self.batch_size)
        self._prepare_schedule(steps_per_epoch * self.epochs)
        step = 0
        for epoch in range(1, self.epochs + 1):
            order = rng.permutation(n)
            totals: dict[str, float] = {}
            for start in range(0, n, self.batch_size):
                rows = order[start:start + self.batch_size]
                sub = full.subset(rows)
                if not self.fine_tune_embeddings:
                    sub = sub.embedded(emb.data)
                stats = self._step(optimizer, sub, emb if self.fine_tune_embeddings else None, rng, step)
                for k, v in stats.items():
                    totals[k] = totals.get(k, 0.0) + v * len(rows)
                step += 1
            self.embeddings_.weight = emb.data
            record = {"epoch": epoch}
            record.update({k: v / n for k, v in totals.items()})
            pred = self._predict_indices(full)
            record["train_accuracy"] = evaluate(pred, labels).micro_f1
            self.history_.append(record)
            if epoch_callback is not None:
                epoch_callback(self, record)
        return self

    def _prepare_schedule(self, total_steps: int) -> None:
        pass

    def _step(self, optimizer, batch, embedding, rng, step) -> dict[str, float]:
        loss = M.train_step_deterministic(self.params_, optimizer, batch, embedding=embedding)
        return {"loss": loss}

    # -- prediction -------------------------------------------------------

    def _predict_batch(self, batch: PairBatch, rng) -> M.Prediction:
        return M.predict(self.params_, batch)

    def _predict_all(self, batch: PairBatch) -> M.Prediction:
        rng = np.random.default_rng(self.random_state)
        parts = []
        for start in range(0, len(batch), _PREDICT_CHUNK):
            rows = np.arange(start, min(start + _PREDICT_CHUNK, len(batch)))
            sub = batch.subset(rows).embedded(self.embeddings_.weight)
            parts.append(self._predict_batch(sub, rng))
        return M.Prediction(
            np.concatenate([p.classes for p in parts]),
            np.concatenate([p.probabilities for p in parts]),
            np.concatenate([p.attention_head for p in parts]),
            np.concatenate([p.attention_body for p in parts]),
        )

    def _predict_indices(self, batch: PairBatch) -> np.ndarray:
        return self._predict_all(batch).classes

    def predict_details(self, X) -> M.Prediction:
        """Class indices, probabilities and per-side attention vectors."""
        check_is_fitted(self, "params_")
        return self._predict_all(self._encode(check_pairs(X)))

    def predict_proba(self, X) -> np.ndarray:
        return self.predict_details(X).probabilities

    def predict(self, X) -> np.ndarray:
        return self.classes_[self.predict_details(X).classes]

    def encode(self, X) -> PairBatch:
        """Padded, embedded batch for ``X`` using the fitted vocabulary."""
        check_is_fitted(self, "params_")
        return self._encode(check_pairs(X)).embedded(self.embeddings_.weight)


class MeanEmbeddingClassifier(_StanceClassifier):
    """Linear softmax classifier over ``[mean(headline) ; mean(body)]`` word vectors."""

    _kind = "mean"

    def __init__(self, embeddings=None, embedding_dim: int = 32, n_max_headline: int = 32, n_max_body: int = 128,
                 learning_rate: float = 1e-3, epochs: int = 10, batch_size: int = 32, class_weight=None,
                 fine_tune_embeddings: bool = False, random_state: int = 0):
        self.embeddings = embeddings
        self.embedding_dim = embedding_dim
        self.n_max_headline = n_max_headline
        self.n_max_body = n_max_body
        self.learning_rate = learning_rate
        self.epochs = epochs
        self.batch_size = batch_size
        self.class_weight = class_weight
        self.fine_tune_embeddings = fine_tune_embeddings
        self.random_state = random_state


class SelfAttentionClassifier(_StanceClassifier):
    """Self-attention encoder driven by the deterministic code z = mu(H); cross-entropy training."""

    _kind = "det-attn"

    def __init__(self, embeddings=None, embedding_dim: int = 32, hidden: int = 32, proj: int = 32,
                 latent_dim: int = 8, n_max_headline: int = 32, n_max_body: int = 128,
                 learning_rate: float = 1e-3, epochs: int = 10, batch_size: int = 32, class_weight=None,
                 fine_tune_embeddings: bool = False, random_state: int = 0):
        self.embeddings = embeddings
        self.embedding_dim = embedding_dim
        self.hidden = hidden
        self.proj = proj
        self.latent_dim = latent_dim
        self.n_max_headline = n_max_headline
        self.n_max_body = n_max_body
        self.learning_rate = learning_rate
        self.epochs = epochs
        self.batch_size = batch_size
        self.class_weight = class_weight
        self.fine_tune_embeddings = fine_tune_embeddings
        self.random_state = random_state


class VSAMClassifier(_StanceClassifier):
    """Variational self-attention stance classifier.

    Trained by maximising the ELBO with reparameterized samples from the
    inference network and analytic KL to the prior network.  Prediction
    uses the prior only: ``predict_mode="mean"`` sets z to its mean,
    ``"sample"`` averages ``predict_samples`` draws.

    ``kl_warmup`` is the number of steps over which the KL weight rises
    linearly from 0 to 1; None means 10% of all training steps, 0 disables
    warmup.
    """

    _kind = "vsam"

    def __init__(self, embeddings=None, embedding_dim: int = 32, hidden: int = 32, proj: int = 32,
                 latent_dim: int = 8, n_max_headline: int = 32, n_max_body: int = 128,
                 learning_rate: float = 1e-3, epochs: int = 10, batch_size: int = 32, n_samples: int = 1,
                 kl_warmup: Optional[int] = None, predict_mode: str = "mean", predict_samples: int = 1,
                 class_weight=None, fine_tune_embeddings: bool = False, random_state: int = 0):
        self.embeddings = embeddings
        self.embedding_dim = embedding_dim
        self.hidden = hidden
        self.proj = proj
        self.latent_dim = latent_dim
        self.n_max_headline = n_max_headline
        self.n_max_body = n_max_body
        self.learning_rate = learning_rate
        self.epochs = epochs
        self.batch_size = batch_size
        self.n_samples = n_samples
        self.kl_warmup = kl_warmup
        self.predict_mode = predict_mode
        self.predict_samples = predict_samples
        self.class_weight = class_weight
        self.fine_tune_embeddings = fine_tune_embeddings
        self.random_state = random_state

    def _check_common(self) -> None:
        super()._check_common()
        check_positive(n_samples=self.n_samples, predict_samples=self.predict_samples)
        if self.predict_mode not in ("mean", "sample"):
            raise ContractError(f"predict_mode must be 'mean' or 'sample', got {self.predict_mode!r}")
        if self.kl_warmup is not None and self.kl_warmup < 0:
            raise ContractError("kl_warmup must be >= 0")

    def _prepare_schedule(self, total_steps: int) -> None:
        self.kl_warmup_steps_ = (int(math.ceil(0.1 * total_steps)) if self.kl_warmup is None
                                 else int(self.kl_warmup))

    def kl_weight(self, step: int) -> float:
        """Linear warmup from 0 at step 0 to 1 at ``kl_warmup_steps_``."""
        w = getattr(self, "kl_warmup_steps_", 0)
        return 1.0 if w == 0 else min(1.0, step / w)

    def _step(self, optimizer, batch, embedding, rng, step) -> dict[str, float]:
        kw = self.kl_weight(step)
        rep = M.train_step(self.params_, optimizer, batch, rng, n_samples=self.n_samples,
                           kl_weight=kw, embedding=embedding)
        return {"elbo": rep.elbo, "reconstruction": rep.reconstruction, "kl": rep.kl, "kl_weight": kw}

    def _predict_batch(self, batch: PairBatch, rng) -> M.Prediction:
        return M.predict(self.params_, batch, self.predict_mode, self.predict_samples, rng=rng)


ESTIMATORS = {"vsam": VSAMClassifier, "det-attn": SelfAttentionClassifier, "mean": MeanEmbeddingClassifier}
