"""Variational self-attention encoder, ELBO training step and baselines.

Every function works on batches: ``H`` is (B, D, n), ``mask`` is (B, n) and
latent codes are (B, d_z).  Single-sentence inputs without the batch axis
also work for the per-sentence functions.

Headline and body share one encoder; each side gets its own latent code and
the classifier sees ``[s_headline ; s_body]``.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, replace
from typing import Iterator, Optional

import numpy as np

from . import tensor as T
from .exceptions import ContractError, DimensionError, NumericalError
from .tensor import Tensor
from .variational import (
    DiagonalGaussian,
    draw_noise,
    kl_divergence,
    reparameterize,
)

LABELS = ("agree", "disagree", "discuss", "unrelated")

KINDS = ("vsam", "det-attn", "mean")


@dataclass(frozen=True)
class ModelShape:
    """Sizes that fix every parameter shape."""

    embedding_dim: int
    hidden: int = 32
    proj: int = 32
    latent_dim: int = 8
    n_max: int = 32
    n_classes: int = 4

    def __post_init__(self):
        for k, v in asdict(self).items():
            if int(v) < 1:
                raise ContractError(f"{k} must be positive, got {v}")


def _layer_shapes(shape: ModelShape, kind: str) -> dict[str, tuple[int, ...]]:
    D, h, p, dz, C = shape.embedding_dim, shape.hidden, shape.proj, shape.latent_dim, shape.n_classes
    shapes: dict[str, tuple[int, ...]] = {}
    if kind in ("vsam", "det-attn"):
        shapes.update({
            "prior.hidden.weight": (h, D), "prior.hidden.bias": (h,),
            "prior.out.weight": (p, h), "prior.out.bias": (p,),
            "prior.mu.weight": (dz, p), "prior.mu.bias": (dz,),
        })
    if kind == "vsam":
        shapes.update({
            "prior.log_sigma.weight": (dz, p), "prior.log_sigma.bias": (dz,),
            "posterior.hidden.weight": (h, D + C), "posterior.hidden.bias": (h,),
            "posterior.out.weight": (p, h), "posterior.out.bias": (p,),
            "posterior.mu.weight": (dz, p), "posterior.mu.bias": (dz,),
            "posterior.log_sigma.weight": (dz, p), "posterior.log_sigma.bias": (dz,),
        })
    if kind in ("vsam", "det-attn"):
        shapes["attention.weight"] = (shape.n_max, dz)
    shapes["classifier.weight"] = (C, 2 * D)
    shapes["classifier.bias"] = (C,)
    return shapes


class VsamParameters:
    """Named trainable tensors for one model kind (``vsam``, ``det-attn`` or ``mean``).

    The deterministic-attention kind holds the subset of VSAM weights it uses,
    under the same names, so weights can be copied between the two.
    """

    def __init__(self, shape: ModelShape, tensors: dict[str, Tensor], kind: str = "vsam"):
        if kind not in KINDS:
            raise ContractError(f"unknown model kind {kind!r}")
        expected = _layer_shapes(shape, kind)
        if set(tensors) != set(expected):
            missing = sorted(set(expected) - set(tensors))
            extra = sorted(set(tensors) - set(expected))
            raise DimensionError(f"parameter names mismatch: missing {missing}, unexpected {extra}")
        for name, t in tensors.items():
            if t.shape != expected[name]:
                raise DimensionError(f"{name}: expected shape {expected[name]}, got {t.shape}")
            t.requires_grad = True
            t.name = name
        self.shape = shape
        self.kind = kind
        self.tensors = {name: tensors[name] for name in expected}

    @classmethod
    def initialize(cls, shape: ModelShape, rng: np.random.Generator, kind: str = "vsam") -> "VsamParameters":
        """Uniform(+-1/sqrt(fan_in)) weights, zero biases, log-sigma biases at -1."""
        tensors = {}
        for name, shp in _layer_shapes(shape, kind).items():
            if name.endswith(".weight"):
                bound = 1.0 / np.sqrt(shp[1])
                data = rng.uniform(-bound, bound, size=shp)
            elif ".log_sigma." in name:
                data = np.full(shp, -1.0)
            else:
                data = np.zeros(shp)
            tensors[name] = Tensor(data)
        return cls(shape, tensors, kind)

    def __getitem__(self, name: str) -> Tensor:
        return self.tensors[name]

    def __contains__(self, name: str) -> bool:
        return name in self.tensors

    def __iter__(self) -> Iterator[str]:
        return iter(self.tensors)

    def items(self):
        return self.tensors.items()

    def values(self):
        return self.tensors.values()

    def names(self) -> list[str]:
        return list(self.tensors)

    def copy(self) -> "VsamParameters":
        return VsamParameters(self.shape, {k: Tensor(v.data) for k, v in self.tensors.items()}, self.kind)

    def zero_grad(self) -> None:
        T.zero_grad(self.tensors.values())

    def all_finite(self) -> bool:
        return all(np.isfinite(t.data).all() for t in self.tensors.values())


# -- encoder pieces --------------------------------------------------------


def _mlp(params: VsamParameters, prefix: str, x: Tensor) -> Tensor:
    h = T.tanh(T.linear(x, params[f"{prefix}.hidden.weight"], params[f"{prefix}.hidden.bias"]))
    return T.tanh(T.linear(h, params[f"{prefix}.out.weight"], params[f"{prefix}.out.bias"]))


def _gaussian_head(params: VsamParameters, prefix: str, pi: Tensor) -> DiagonalGaussian:
    mu = T.linear(pi, params[f"{prefix}.mu.weight"], params[f"{prefix}.mu.bias"])
    raw = T.linear(pi, params[f"{prefix}.log_sigma.weight"], params[f"{prefix}.log_sigma.bias"])
    return DiagonalGaussian.from_network(mu, raw)


def prior_mean(params: VsamParameters, H, mask) -> Tensor:
    pi = _mlp(params, "prior", T.mean_pool_columns(H, mask))
    return T.linear(pi, params["prior.mu.weight"], params["prior.mu.bias"])


def prior_params(params: VsamParameters, H, mask) -> DiagonalGaussian:
    """p(z | H): mean-pooled tokens through the prior MLP and two linear heads."""
    pi = _mlp(params, "prior", T.mean_pool_columns(H, mask))
    return _gaussian_head(params, "prior", pi)


def one_hot(y, n_classes: int) -> np.ndarray:
    y = np.asarray(y, dtype=np.int64)
    if np.any(y < 0) or np.any(y >= n_classes):
        raise ContractError(f"class index out of range 0..{n_classes - 1}: {y}")
    return np.eye(n_classes)[y]


def posterior_params(params: VsamParameters, H, mask, y) -> DiagonalGaussian:
    """q(z | H, y): pooled tokens concatenated with one-hot(y) through the inference MLP."""
    pooled = T.mean_pool_columns(H, mask)
    label = one_hot(y, params.shape.n_classes)
    if label.shape[:-1] != pooled.shape[:-1]:
        raise DimensionError(f"labels shape {np.shape(y)} does not match batch shape {pooled.shape[:-1]}")
    pi = _mlp(params, "posterior", T.concat([pooled, label], axis=-1))
    return _gaussian_head(params, "posterior", pi)


def attention_weights(params: VsamParameters, z, mask) -> Tensor:
    """a = masked_softmax(tanh(W^z z))."""
    scores = T.tanh(T.linear(z, params["attention.weight"]))
    return T.masked_softmax(scores, mask)


def sentence_embedding(H, a) -> Tensor:
    """s = H a."""
    H, a = T.as_tensor(H), T.as_tensor(a)
    if H.shape[-1] != a.shape[-1] or H.shape[:-2] != a.shape[:-1]:
        raise DimensionError(f"sentence_embedding: H shape {H.shape} and a shape {a.shape} disagree")
    if a.ndim == 1:
        return T.matmul(H, a)
    col = T.reshape(a, a.shape + (1,))
    return T.reshape(T.matmul(H, col), H.shape[:-1])


def class_logits(params: VsamParameters, s_pair) -> Tensor:
    return T.linear(s_pair, params["classifier.weight"], params["classifier.bias"])


def classify(params: VsamParameters, s_pair) -> Tensor:
    """Class probabilities from ``[s_headline ; s_body]``."""
    logits = class_logits(params, s_pair)
    return T.masked_softmax(logits, np.ones(logits.shape, dtype=bool))


def _side(params: VsamParameters, H, mask, z) -> tuple[Tensor, Tensor]:
    a = attention_weights(params, z, mask)
    return sentence_embedding(H, a), a


# -- batches ---------------------------------------------------------------


@dataclass
class PairBatch:
    """Headline/body pairs as padded index matrices plus masks.

    Both sides are padded to the attention width.  ``H_head``/``H_body``
    are filled by :meth:`embedded`.
    """

    idx_head: np.ndarray
    mask_head: np.ndarray
    idx_body: np.ndarray
    mask_body: np.ndarray
    labels: Optional[np.ndarray] = None
    weights: Optional[np.ndarray] = None
    H_head: Optional[Tensor] = None
    H_body: Optional[Tensor] = None

    def __len__(self) -> int:
        return self.mask_head.shape[0]

    def embedded(self, weight) -> "PairBatch":
        """Look up H for both sides from ``weight`` (D, N); differentiable if ``weight`` requires grad."""
        return replace(self, H_head=T.gather_columns(weight, self.idx_head),
                       H_body=T.gather_columns(weight, self.idx_body))

    def subset(self, rows) -> "PairBatch":
        def take(x):
            return None if x is None else x[rows]
        return PairBatch(
            self.idx_head[rows], self.mask_head[rows], self.idx_body[rows], self.mask_body[rows],
            take(self.labels), take(self.weights),
            None if self.H_head is None else Tensor(self.H_head.data[rows]),
            None if self.H_body is None else Tensor(self.H_body.data[rows]),
        )


# -- objective -------------------------------------------------------------


@dataclass(frozen=True)
class ElboReport:
    """Batch-mean ELBO pieces; ``elbo == reconstruction - kl_weight * kl``."""

    elbo: float
    reconstruction: float
    kl: float
    n_samples: int
    kl_weight: float = 1.0


def elbo(params: VsamParameters, batch: PairBatch, n_samples: int = 1, noise=None, kl_weight: float = 1.0,
         rng: Optional[np.random.Generator] = None) -> tuple[Tensor, ElboReport]:
    """Monte-Carlo ELBO of a labelled batch.

    ``noise`` is either None (fresh draws from ``rng``) or a sequence of
    ``n_samples`` pairs of :class:`NoiseDraw` (headline, body).  Returns the
    differentiable batch-mean objective (class-weighted when ``batch.weights``
    is set) and an unweighted report.
    """
    if n_samples < 1:
        raise ContractError(f"need at least one sample, got {n_samples}")
    if params.kind != "vsam":
        raise ContractError("elbo needs VSAM parameters")
    if batch.labels is None:
        raise ContractError("elbo needs labels")
    y = batch.labels
    q_h = posterior_params(params, batch.H_head, batch.mask_head, y)
    q_b = posterior_params(params, batch.H_body, batch.mask_body, y)
    p_h = prior_params(params, batch.H_head, batch.mask_head)
    p_b = prior_params(params, batch.H_body, batch.mask_body)

    recon = None
    for l in range(n_samples):
        if noise is None:
            if rng is None:
                raise ContractError("elbo needs either noise or rng")
            e_h, e_b = draw_noise(q_h.mu.shape, rng), draw_noise(q_b.mu.shape, rng)
        else:
            e_h, e_b = noise[l]
        s_h, _ = _side(params, batch.H_head, batch.mask_head, reparameterize(q_h, e_h))
        s_b, _ = _side(params, batch.H_body, batch.mask_body, reparameterize(q_b, e_b))
        ll = T.pick(T.log_softmax(class_logits(params, T.concat([s_h, s_b]))), y)
        recon = ll if recon is None else recon + ll
    recon = recon * (1.0 / n_samples)
    kl = kl_divergence(q_h, p_h) + kl_divergence(q_b, p_b)
    per_example = recon - kl_weight * kl
    w = np.ones(len(batch)) if batch.weights is None else np.asarray(batch.weights, dtype=np.float64)
    objective = T.sum(per_example * w) * (1.0 / len(batch))
    report = ElboReport(
        elbo=float(per_example.data.mean()),
        reconstruction=float(recon.data.mean()),
        kl=float(kl.data.mean()),
        n_samples=n_samples,
        kl_weight=float(kl_weight),
    )
    return objective, report


def cross_entropy(params: VsamParameters, batch: PairBatch) -> Tensor:
    """Mean (optionally class-weighted) negative log-likelihood of a deterministic model."""
    if batch.labels is None:
        raise ContractError("cross_entropy needs labels")
    logits = _deterministic_logits(params, batch)
    nll = -T.pick(T.log_softmax(logits), batch.labels)
    w = np.ones(len(batch)) if batch.weights is None else np.asarray(batch.weights, dtype=np.float64)
    return T.sum(nll * w) * (1.0 / len(batch))


def _deterministic_logits(params: VsamParameters, batch: PairBatch) -> Tensor:
    if params.kind == "mean":
        s_h = T.mean_pool_columns(batch.H_head, batch.mask_head)
        s_b = T.mean_pool_columns(batch.H_body, batch.mask_body)
    else:
        s_h, _ = _side(params, batch.H_head, batch.mask_head, prior_mean(params, batch.H_head, batch.mask_head))
        s_b, _ = _side(params, batch.H_body, batch.mask_body, prior_mean(params, batch.H_body, batch.mask_body))
    return class_logits(params, T.concat([s_h, s_b]))


# -- optimisation ----------------------------------------------------------


class Adam:
    """Adam over a :class:`VsamParameters` (plus optional extra tensors)."""

    def __init__(self, tensors: dict[str, Tensor], lr: float = 1e-3, beta1: float = 0.9,
                 beta2: float = 0.999, eps: float = 1e-8):
        self.tensors = dict(tensors)
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.t = 0
        self.m = {k: np.zeros_like(v.data) for k, v in self.tensors.items()}
        self.v = {k: np.zeros_like(v.data) for k, v in self.tensors.items()}

    def step(self) -> None:
        """Apply one update from the stored ``.grad``; nothing changes if any result is non-finite."""
        t = self.t + 1
        new_m, new_v, new_p = {}, {}, {}
        for k, p in self.tensors.items():
            if p.grad is None:
                continue
            g = p.grad
            m = self.beta1 * self.m[k] + (1 - self.beta1) * g
            v = self.beta2 * self.v[k] + (1 - self.beta2) * g * g
            m_hat = m / (1 - self.beta1 ** t)
            v_hat = v / (1 - self.beta2 ** t)
            upd = p.data - self.lr * m_hat / (np.sqrt(v_hat) + self.eps)
            if not np.isfinite(upd).all():
                raise NumericalError(f"update of {k} is not finite")
            new_m[k], new_v[k], new_p[k] = m, v, upd
        for k, upd in new_p.items():
            self.tensors[k].data = upd
            self.m[k], self.v[k] = new_m[k], new_v[k]
        self.t = t

    def zero_grad(self) -> None:
        T.zero_grad(self.tensors.values())


def _checked_backward(tape: T.Tape, loss: Tensor, optimizer: Adam) -> None:
    if not np.isfinite(loss.data).all():
        optimizer.zero_grad()
        raise NumericalError(f"non-finite loss {loss.item()}")
    T.backward(tape, loss)
    for k, t in optimizer.tensors.items():
        if t.grad is not None and not np.isfinite(t.grad).all():
            optimizer.zero_grad()
            raise NumericalError(f"non-finite gradient for {k}")


def train_step(params: VsamParameters, optimizer: Adam, batch: PairBatch, rng: np.random.Generator,
               n_samples: int = 1, kl_weight: float = 1.0, embedding=None) -> ElboReport:
    """One Adam step on the negative batch ELBO.

    When ``embedding`` (a (D, N) tensor) is given, H is looked up inside the
    tape so trainable embeddings receive gradients.  On a non-finite loss or gradient a
    :class:`NumericalError` is raised and parameters stay unchanged.
    """
    if len(batch) == 0:
        raise ContractError("empty batch")
    with T.Tape() as tape:
        b = batch.embedded(embedding) if embedding is not None else batch
        objective, report = elbo(params, b, n_samples, kl_weight=kl_weight, rng=rng)
        loss = -objective
    _checked_backward(tape, loss, optimizer)
    optimizer.step()
    optimizer.zero_grad()
    return report


def train_step_deterministic(params: VsamParameters, optimizer: Adam, batch: PairBatch, embedding=None) -> float:
    """One Adam step on cross-entropy for the baselines; returns the loss."""
    if len(batch) == 0:
        raise ContractError("empty batch")
    with T.Tape() as tape:
        b = batch.embedded(embedding) if embedding is not None else batch
        loss = cross_entropy(params, b)
    _checked_backward(tape, loss, optimizer)
    optimizer.step()
    optimizer.zero_grad()
    return loss.item()


# -- prediction ------------------------------------------------------------


@dataclass
class Prediction:
    classes: np.ndarray
    probabilities: np.ndarray
    attention_head: np.ndarray
    attention_body: np.ndarray


def predict(params: VsamParameters, batch: PairBatch, mode: str = "mean", n_samples: int = 1,
            rng: Optional[np.random.Generator] = None, noise=None, chunk_rows: int = 8192) -> Prediction:
    """Class probabilities and attention vectors.

    ``mode="mean"`` uses z = mu_theta for both sides.  ``mode="sample"``
    averages probabilities (and attention) over ``n_samples`` draws from the
    prior; ``noise`` may fix those draws as a pair of arrays shaped
    (n_samples, B, d_z).
    """
    if params.kind == "mean":
        logits = _deterministic_logits(params, batch).data
        probs = _softmax(logits)
        B = len(batch)
        return Prediction(probs.argmax(-1), probs, np.zeros((B, 0)), np.zeros((B, 0)))
    H_h, m_h, H_b, m_b = batch.H_head, batch.mask_head, batch.H_body, batch.mask_body
    if mode == "mean" or params.kind == "det-attn":
        s_h, a_h = _side(params, H_h, m_h, prior_mean(params, H_h, m_h))
        s_b, a_b = _side(params, H_b, m_b, prior_mean(params, H_b, m_b))
        probs = classify(params, T.concat([s_h, s_b])).data
        return Prediction(probs.argmax(-1), probs, a_h.data, a_b.data)
    if mode != "sample":
        raise ContractError(f"unknown predict mode {mode!r}")
    if n_samples < 1:
        raise ContractError("n_samples must be >= 1")
    if noise is None and rng is None:
        raise ContractError("sample mode needs rng or noise")

    p_h = prior_params(params, H_h, m_h)
    p_b = prior_params(params, H_b, m_b)
    B, dz = p_h.mu.shape
    H_h, H_b = T.as_tensor(H_h).data, T.as_tensor(H_b).data
    probs = np.zeros((B, params.shape.n_classes))
    att_h = np.zeros(m_h.shape)
    att_b = np.zeros(m_b.shape)
    per_chunk = max(1, chunk_rows // B)
    done = 0
    while done < n_samples:
        k = min(per_chunk, n_samples - done)
        if noise is None:
            e_h = rng.standard_normal((k, B, dz))
            e_b = rng.standard_normal((k, B, dz))
        else:
            e_h, e_b = noise[0][done:done + k], noise[1][done:done + k]
        z_h = (p_h.mu.data + p_h.sigma * e_h).reshape(k * B, dz)
        z_b = (p_b.mu.data + p_b.sigma * e_b).reshape(k * B, dz)
        s_h, a_h = _side(params, _tile(H_h, k), _tile(m_h, k), z_h)
        s_b, a_b = _side(params, _tile(H_b, k), _tile(m_b, k), z_b)
        pr = classify(params, T.concat([s_h, s_b])).data
        probs += pr.reshape(k, B, -1).sum(axis=0)
        att_h += a_h.data.reshape((k,) + m_h.shape).sum(axis=0)
        att_b += a_b.data.reshape((k,) + m_b.shape).sum(axis=0)
        done += k
    probs /= n_samples
    return Prediction(probs.argmax(-1), probs, att_h / n_samples, att_b / n_samples)


def _tile(x: np.ndarray, k: int) -> np.ndarray:
    """Stack ``k`` copies along a new leading axis, then merge it into the batch axis."""
    return np.broadcast_to(x, (k,) + x.shape).reshape((k * x.shape[0],) + x.shape[1:])


def _softmax(logits: np.ndarray) -> np.ndarray:
    e = np.exp(logits - logits.max(axis=-1, keepdims=True))
    return e / e.sum(axis=-1, keepdims=True)


def baseline_mean_embedding(params: VsamParameters, batch: PairBatch) -> np.ndarray:
    """Probabilities of the mean-pooled-embedding linear classifier."""
    if params.kind != "mean":
        raise ContractError("baseline_mean_embedding needs 'mean' parameters")
    return _softmax(_deterministic_logits(params, batch).data)


def baseline_deterministic_attention(params: VsamParameters, batch: PairBatch) -> np.ndarray:
    """Probabilities of self-attention driven by z = mu_theta (no sampling, no KL)."""
    if params.kind == "mean":
        raise ContractError("deterministic attention needs 'det-attn' or 'vsam' parameters")
    return _softmax(_deterministic_logits(params, batch).data)


def log_likelihood_given_z(params: VsamParameters, H_h, m_h, H_b, m_b, z_h: np.ndarray, z_b: np.ndarray, y: int) -> np.ndarray:
    """log p(y | z) for many latent draws of one example (no tape)."""
    k = z_h.shape[0]
    H_h, H_b = T.as_tensor(H_h).data, T.as_tensor(H_b).data
    s_h, _ = _side(params, np.broadcast_to(H_h, (k,) + H_h.shape[-2:]), np.broadcast_to(m_h, (k,) + m_h.shape[-1:]), z_h)
    s_b, _ = _side(params, np.broadcast_to(H_b, (k,) + H_b.shape[-2:]), np.broadcast_to(m_b, (k,) + m_b.shape[-1:]), z_b)
    return T.log_softmax(class_logits(params, T.concat([s_h, s_b]))).data[:, y]
