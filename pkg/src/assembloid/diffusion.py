"""Variance-preserving noise schedules, noising, denoising and sampling.

A denoiser is any object with ``predict(noisy, label, z, schedule)`` that
returns a noise estimate of the same shape as ``noisy``.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Protocol

import numpy as np
from scipy.special import logsumexp

from .geometry import CorrespondenceError, as_cloud


class ScheduleError(ValueError):
    pass


class StepError(ValueError):
    pass


class InterfaceViolation(RuntimeError):
    """A denoiser returned something that is not a cloud of the input's shape."""


@dataclass(frozen=True, eq=False)
class NoiseSchedule:
    """``sigma[z]`` and ``alpha[z]`` for ``z = 0..Z``; ``sigma[0] == 0``."""

    Z: int
    sigma: np.ndarray
    alpha: np.ndarray

    def check(self, z: int) -> int:
        if not (0 <= int(z) <= self.Z) or int(z) != z:
            raise StepError(f"step {z} outside [0, {self.Z}]")
        return int(z)


def linear_schedule(Z: int = 200, sigma_max: float = 0.99) -> NoiseSchedule:
    """``sigma_z**2 = sigma_max**2 * z / Z`` and ``alpha_z = sqrt(1 - sigma_z**2)``."""
    if Z < 1:
        raise ScheduleError("Z must be >= 1")
    if not (0.0 < sigma_max <= 1.0):
        raise ScheduleError(f"sigma_max must lie in (0, 1], got {sigma_max}")
    var = sigma_max ** 2 * np.arange(Z + 1) / Z
    sigma = np.sqrt(var)
    alpha = np.sqrt(1.0 - var)
    sigma.setflags(write=False)
    alpha.setflags(write=False)
    return NoiseSchedule(Z, sigma, alpha)


def forward_noise(cloud, schedule: NoiseSchedule, z: int, rng: np.random.Generator):
    """Return ``(alpha_z * cloud + sigma_z * eps, eps)`` with standard normal ``eps``."""
    z = schedule.check(z)
    cloud = as_cloud(cloud)
    eps = rng.standard_normal(cloud.shape)
    return schedule.alpha[z] * cloud + schedule.sigma[z] * eps, eps


class Denoiser(Protocol):
    def predict(self, noisy: np.ndarray, label: str, z: int, schedule: NoiseSchedule) -> np.ndarray:
        ...


def _checked_prediction(denoiser, noisy, label, z, schedule) -> np.ndarray:
    eps_hat = np.asarray(denoiser.predict(noisy, label, z, schedule), dtype=np.float64)
    if eps_hat.shape != noisy.shape:
        raise InterfaceViolation(f"denoiser returned shape {eps_hat.shape}, expected {noisy.shape}")
    if not np.isfinite(eps_hat).all():
        raise InterfaceViolation("denoiser returned non-finite values")
    return eps_hat


def denoise_estimate(noisy, denoiser, label: str, z: int, schedule: NoiseSchedule,
                     mode: str = "literal") -> np.ndarray:
    """One-step clean estimate of ``noisy``.

    ``literal`` subtracts the prediction directly (``noisy - eps_hat``);
    ``ddpm`` inverts the forward marginal, ``(noisy - sigma_z * eps_hat) / alpha_z``.
    """
    z = schedule.check(z)
    noisy = np.asarray(noisy, dtype=np.float64)
    eps_hat = _checked_prediction(denoiser, noisy, label, z, schedule)
    if mode == "literal":
        return noisy - eps_hat
    if mode == "ddpm":
        a = schedule.alpha[z]
        if a == 0.0:
            raise StepError(f"alpha is zero at step {z}; the clean estimate is undefined")
        return (noisy - schedule.sigma[z] * eps_hat) / a
    raise ValueError(f"unknown denoise mode {mode!r}")


def sample(denoiser, schedule: NoiseSchedule, label: str, n_points: int,
           rng: np.random.Generator, mode: str = "ddpm") -> np.ndarray:
    """Ancestral sampling from a standard normal prior.

    Each reverse step draws from the Gaussian posterior ``q(x_{z-1} | x_z, x0)``
    with the clean estimate plugged in for ``x0``. Its variance,
    ``sigma_{z-1}**2 / sigma_z**2 * (1 - alpha_z**2 / alpha_{z-1}**2)``,
    shrinks with the schedule and vanishes at the last step.
    """
    x = rng.standard_normal((n_points, 3))
    a, s = schedule.alpha, schedule.sigma
    for z in range(schedule.Z, 0, -1):
        x0 = denoise_estimate(x, denoiser, label, z, schedule, mode)
        beta = 1.0 - (a[z] / a[z - 1]) ** 2
        mean = (a[z - 1] * beta * x0 + (a[z] / a[z - 1]) * s[z - 1] ** 2 * x) / s[z] ** 2
        var = s[z - 1] ** 2 * beta / s[z] ** 2
        x = mean + np.sqrt(var) * rng.standard_normal(x.shape)
    return x


# ---------------------------------------------------------------------------
# analytic denoisers


class MemorizedShapeDenoiser:
    """Oracle that knows one target cloud.

    The clean estimate it induces is ``(1 - blend) * noisy + blend * target``
    under the denoise mode it was built for, so ``blend=1`` returns the target
    exactly and smaller values leave part of the injected noise in place.
    """

    def __init__(self, target, mode: str = "literal", blend: float = 1.0, label: str | None = None):
        if mode not in ("literal", "ddpm"):
            raise ValueError(f"unknown mode {mode!r}")
        if not 0.0 <= blend <= 1.0:
            raise ValueError("blend must lie in [0, 1]")
        self.target = as_cloud(target)
        self.mode = mode
        self.blend = blend
        self.label = label

    def predict(self, noisy, label, z, schedule):
        noisy = np.asarray(noisy, dtype=np.float64)
        if noisy.shape != self.target.shape:
            raise CorrespondenceError(f"memorized cloud has shape {self.target.shape}, got {noisy.shape}")
        goal = noisy + self.blend * (self.target - noisy) if self.blend != 1.0 else self.target
        if self.mode == "literal":
            return noisy - goal
        a, s = schedule.alpha[z], schedule.sigma[z]
        if s == 0.0:
            return np.zeros_like(noisy)
        return (noisy - a * goal) / s


class GaussianMixtureDenoiser:
    """Exact posterior-mean noise for a Gaussian-mixture data distribution.

    ``means`` has shape ``(K, m, 3)``. With ``m`` equal to the cloud size each
    component is a distribution over whole clouds; with ``m == 1`` every point
    is an independent draw from a mixture over R^3 (a shape density that
    ignores point order).
    """

    def __init__(self, means, variances, weights=None):
        means = np.asarray(means, dtype=np.float64)
        if means.ndim == 2:
            means = means[:, None, :]
        if means.ndim != 3 or means.shape[2] != 3:
            raise ValueError(f"means must have shape (K, m, 3), got {means.shape}")
        K = means.shape[0]
        variances = np.broadcast_to(np.asarray(variances, dtype=np.float64), (K,)).copy()
        if (variances < 0).any():
            raise ValueError("variances must be non-negative")
        weights = np.full(K, 1.0 / K) if weights is None else np.asarray(weights, dtype=np.float64)
        if weights.shape != (K,) or (weights < 0).any() or abs(weights.sum() - 1.0) > 1e-9:
            raise ValueError("weights must be K non-negative numbers summing to 1")
        self.means, self.variances, self.weights = means, variances, weights

    @classmethod
    def from_shape(cls, cloud, variance: float = 1e-4) -> GaussianMixtureDenoiser:
        """Per-point density with one equally weighted component at every point of ``cloud``."""
        cloud = as_cloud(cloud)
        return cls(cloud[:, None, :], variance)

    @property
    def per_point(self) -> bool:
        return self.means.shape[1] == 1

    def posterior_mean(self, noisy, z, schedule) -> np.ndarray:
        """``E[x0 | x_z]``."""
        a, s = schedule.alpha[z], schedule.sigma[z]
        noisy = np.asarray(noisy, dtype=np.float64)
        s2 = a * a * self.variances + s * s  # (K,)
        if (s2 == 0).any():
            raise ValueError("zero total variance; posterior is degenerate")
        if self.per_point:
            mu = self.means[:, 0, :]  # (K, 3)
            d2 = (noisy ** 2).sum(1)[:, None] - 2 * a * noisy @ mu.T + a * a * (mu ** 2).sum(1)[None, :]
            np.maximum(d2, 0.0, out=d2)
            d2 *= -0.5 / s2[None, :]
            d2 += np.log(self.weights) - 1.5 * np.log(s2)
            d2 -= d2.max(axis=1, keepdims=True)
            r = np.exp(d2, out=d2)  # (n, K) responsibilities
            r /= r.sum(axis=1, keepdims=True)
            gain = a * self.variances / s2  # (K,)
            # component posterior: mu_k + gain_k * (x - a mu_k)
            return r @ (mu * (1 - a * gain)[:, None]) + (r @ gain)[:, None] * noisy
        if self.means.shape[1] != noisy.shape[0]:
            raise CorrespondenceError("mixture clouds and input differ in point count")
        diff = noisy[None] - a * self.means  # (K, n, 3)
        d2 = (diff ** 2).sum(axis=(1, 2))
        dim = noisy.size
        logr = np.log(self.weights) - 0.5 * d2 / s2 - 0.5 * dim * np.log(s2)
        r = np.exp(logr - logsumexp(logr))
        gain = a * self.variances / s2
        post = self.means + gain[:, None, None] * diff
        return np.tensordot(r, post, axes=1)

    def predict(self, noisy, label, z, schedule):
        s = schedule.sigma[z]
        noisy = np.asarray(noisy, dtype=np.float64)
        if s == 0.0:
            return np.zeros_like(noisy)
        return (noisy - schedule.alpha[z] * self.posterior_mean(noisy, z, schedule)) / s
