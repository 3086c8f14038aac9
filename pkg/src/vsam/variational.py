"""Diagonal Gaussians, reparameterized sampling and closed-form KL."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, Union

import numpy as np

from . import tensor as T
from .exceptions import ContractError, DimensionError
from .tensor import Tensor

LOG_SIGMA_MIN = -8.0
LOG_SIGMA_MAX = 8.0
_HALF_LOG_2PI = 0.5 * math.log(2.0 * math.pi)


@dataclass
class DiagonalGaussian:
    """N(mu, diag(exp(log_sigma)^2)); leading axes of ``mu`` may index a batch."""

    mu: Tensor
    log_sigma: Tensor

    def __post_init__(self):
        self.mu = T.as_tensor(self.mu)
        self.log_sigma = T.as_tensor(self.log_sigma)
        if self.mu.shape != self.log_sigma.shape:
            raise DimensionError(f"mu shape {self.mu.shape} and log_sigma shape {self.log_sigma.shape} differ")

    @classmethod
    def from_network(cls, mu: Tensor, raw_log_sigma: Tensor) -> "DiagonalGaussian":
        """Build from network outputs, clamping log_sigma to [-8, 8]."""
        return cls(mu, T.clip(raw_log_sigma, LOG_SIGMA_MIN, LOG_SIGMA_MAX))

    @property
    def dim(self) -> int:
        return self.mu.shape[-1]

    @property
    def sigma(self) -> np.ndarray:
        return np.exp(self.log_sigma.data)


@dataclass(frozen=True)
class NoiseDraw:
    """Standard-normal noise held constant w.r.t. differentiation."""

    eps: np.ndarray
    seed: Optional[int] = None


def draw_noise(shape: Union[int, tuple], rng: Union[int, np.random.Generator]) -> NoiseDraw:
    """Draw i.i.d. N(0, 1) noise of ``shape`` from a seed or a numpy Generator."""
    shape = (shape,) if isinstance(shape, (int, np.integer)) else tuple(shape)
    if not shape or min(shape) < 1:
        raise ContractError(f"noise dimension must be >= 1, got {shape}")
    seed = None
    if not isinstance(rng, np.random.Generator):
        seed = int(rng)
        rng = np.random.default_rng(seed)
    return NoiseDraw(rng.standard_normal(shape), seed)


def zero_noise(shape) -> NoiseDraw:
    shape = (shape,) if isinstance(shape, (int, np.integer)) else tuple(shape)
    return NoiseDraw(np.zeros(shape))


def reparameterize(g: DiagonalGaussian, noise: NoiseDraw) -> Tensor:
    """z = mu + sigma * eps, differentiable through mu and log_sigma."""
    if noise.eps.shape != g.mu.shape:
        raise ContractError(f"noise shape {noise.eps.shape} does not match Gaussian shape {g.mu.shape}")
    return g.mu + T.exp(g.log_sigma) * noise.eps


def kl_divergence(q: DiagonalGaussian, p: DiagonalGaussian) -> Tensor:
    """KL(q || p) summed over the last axis (one value per batch row)."""
    if q.mu.shape != p.mu.shape:
        raise ContractError(f"KL between shapes {q.mu.shape} and {p.mu.shape}")
    diff = q.mu - p.mu
    var_ratio = T.exp(2.0 * (q.log_sigma - p.log_sigma))
    mean_term = diff * diff * T.exp(-2.0 * p.log_sigma)
    terms = (p.log_sigma - q.log_sigma) + 0.5 * (var_ratio + mean_term) - 0.5
    return T.sum(terms, axis=-1)


def log_density(g: DiagonalGaussian, z) -> Tensor:
    """log N(z | mu, diag(sigma^2)) summed over the last axis."""
    z = T.as_tensor(z)
    if z.shape != g.mu.shape:
        raise ContractError(f"z shape {z.shape} does not match Gaussian shape {g.mu.shape}")
    diff = z - g.mu
    quad = diff * diff * T.exp(-2.0 * g.log_sigma)
    return T.sum(-_HALF_LOG_2PI - g.log_sigma - 0.5 * quad, axis=-1)
