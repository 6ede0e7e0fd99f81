"""Variance-exploding diffusion: noise schedule, perturbation kernel and the
denoising score-matching objective.

A *score model* is any object with

* ``__call__(x, sigma)`` returning an array shaped like ``x`` (a single
  ``(C, h, w)`` stack, or a batch ``(B, C, h, w)`` with ``sigma`` of length B);
* ``to_model(x)`` / ``from_model(x)`` mapping raw sub-band stacks into the
  frame where the model's noise levels are defined, and back;
* ``channels`` (4 for the full-band model, 3 for the detail-band model, or
  ``None`` when shape-agnostic).
"""
from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import InvalidArgument


@dataclass(frozen=True)
class NoiseSchedule:
    sigma_min: float
    sigma_max: float
    T: int
    sigmas: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        if not (0 < self.sigma_min < self.sigma_max) or not np.isfinite(self.sigma_max):
            raise InvalidArgument(
                f"need 0 < sigma_min < sigma_max, got {self.sigma_min}, {self.sigma_max}")
        if int(self.T) != self.T or self.T < 2:
            raise InvalidArgument(f"schedule needs T >= 2, got {self.T}")
        k = np.arange(self.T) / (self.T - 1)
        sig = self.sigma_min * (self.sigma_max / self.sigma_min) ** k
        sig[0], sig[-1] = self.sigma_min, self.sigma_max
        object.__setattr__(self, "sigmas", sig)

    def sigma(self, i: int) -> float:
        """``sigma_i`` with the ``sigma_0 = 0`` convention; ``i`` runs 0..T."""
        return 0.0 if i == 0 else float(self.sigmas[i - 1])

    @property
    def median(self) -> float:
        return float(np.median(self.sigmas))


def geometric_schedule(sigma_min: float, sigma_max: float, T: int) -> NoiseSchedule:
    return NoiseSchedule(float(sigma_min), float(sigma_max), int(T))


def _as_array(x):
    return np.asarray(getattr(x, "planes", x), dtype=np.float64)


def perturb(x0, sigma: float, rng: np.random.Generator) -> np.ndarray:
    if sigma < 0:
        raise InvalidArgument(f"sigma must be >= 0, got {sigma}")
    x0 = _as_array(x0)
    if sigma == 0:
        return x0.copy()
    return x0 + sigma * rng.standard_normal(x0.shape)


def _item_rng(base: int, item: np.ndarray) -> np.random.Generator:
    digest = hashlib.blake2b(np.ascontiguousarray(item).tobytes(), digest_size=8).digest()
    return np.random.default_rng([base, int.from_bytes(digest, "little")])


def dsm_loss(model, batch, schedule: NoiseSchedule, rng: np.random.Generator) -> float:
    """Monte-Carlo denoising score-matching loss with weight ``sigma**2``.

    Each item draws its noise level and noise from a substream keyed by its
    own contents, so the estimate does not depend on batch order.
    """
    batch = [_as_array(b) for b in batch]
    if not batch:
        raise InvalidArgument("dsm_loss needs a non-empty batch")
    channels = getattr(model, "channels", None)
    if channels is not None and any(b.shape[0] != channels for b in batch):
        raise InvalidArgument(f"model expects {channels}-plane stacks")
    base = int(rng.integers(2**63))
    losses = []
    for x0 in batch:
        sub = _item_rng(base, x0)
        sigma = float(schedule.sigmas[sub.integers(schedule.T)])
        z = sub.standard_normal(x0.shape)
        xt = x0 + sigma * z
        residual = sigma * model(xt, sigma) + z
        losses.append(float(np.sum(residual**2)))
    return math.fsum(sorted(losses)) / len(losses)


class GaussianScore:
    """Exact score of ``N(mu, diag(var))`` convolved with ``N(0, sigma^2)``."""

    def __init__(self, mu, var):
        self.mu = np.asarray(mu, dtype=np.float64)
        self.var = np.broadcast_to(np.asarray(var, dtype=np.float64), self.mu.shape).copy()
        if np.any(self.var < 0):
            raise InvalidArgument("variance must be non-negative")
        self.channels = self.mu.shape[0] if self.mu.ndim == 3 else None

    def __call__(self, x, sigma):
        x = _as_array(x)
        sigma = np.asarray(sigma, dtype=np.float64)
        if sigma.ndim == 1 and x.ndim == self.mu.ndim + 1:
            sigma = sigma.reshape((-1,) + (1,) * self.mu.ndim)
        return (self.mu - x) / (self.var + sigma**2)

    def log_density(self, x, sigma):
        x = _as_array(x)
        v = self.var + sigma**2
        return float(np.sum(-0.5 * (x - self.mu) ** 2 / v - 0.5 * np.log(2 * np.pi * v)))

    def to_model(self, x):
        return _as_array(x)

    def from_model(self, x):
        return _as_array(x)


def gaussian_analytic_score(mu, var) -> GaussianScore:
    return GaussianScore(mu, var)


class ZeroScore:
    """A score model that always returns zero; used for degenerate runs."""

    def __init__(self, channels=None):
        self.channels = channels

    def __call__(self, x, sigma):
        return np.zeros_like(_as_array(x))

    def to_model(self, x):
        return _as_array(x)

    def from_model(self, x):
        return _as_array(x)
