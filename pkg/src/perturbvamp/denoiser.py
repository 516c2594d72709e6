"""Bernoulli-Gaussian (spike-and-slab) MMSE denoising and extrinsic messages."""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

__all__ = [
    "BernoulliGaussianPrior",
    "DegeneratePriorWarning",
    "ETA_MAX",
    "GAMMA_MIN",
    "denoise",
    "posterior_moments",
    "extrinsic",
]

ETA_MAX = 1e12
GAMMA_MIN = 1e-8

_LOG_2PI = np.log(2.0 * np.pi)


class DegeneratePriorWarning(RuntimeWarning):
    """The posterior collapsed to a point mass; the precision was clamped."""


@dataclass(frozen=True)
class BernoulliGaussianPrior:
    """p(x) = (1 - rho) delta(x) + rho N(x; mu_x, sigma_x2)."""

    rho: float = 0.2
    mu_x: float = 0.0
    sigma_x2: float = 1.0

    def __post_init__(self):
        if not 0.0 <= self.rho <= 1.0:
            raise ValueError(f"rho must lie in [0, 1], got {self.rho}")
        if not self.sigma_x2 > 0:
            raise ValueError(f"sigma_x2 must be positive, got {self.sigma_x2}")


def _log_normal(r, mean, var):
    return -0.5 * (_LOG_2PI + np.log(var) + (r - mean) ** 2 / var)


def posterior_moments(prior: BernoulliGaussianPrior, r1, gamma1):
    """Componentwise posterior mean and variance of x given r1 = x + N(0, 1/gamma1)."""
    r = np.asarray(r1, dtype=float)
    if not gamma1 > 0:
        raise ValueError(f"gamma1 must be positive, got {gamma1}")
    rho, mu, s2 = prior.rho, prior.mu_x, prior.sigma_x2

    v = 1.0 / (gamma1 + 1.0 / s2)
    m = v * (gamma1 * r + mu / s2)

    # slab responsibility via log-sum-exp; the spike is N(r; 0, 1/gamma1)
    if rho == 0.0:
        pi = np.zeros_like(r)
    elif rho == 1.0:
        pi = np.ones_like(r)
    else:
        log_slab = np.log(rho) + _log_normal(r, mu, s2 + 1.0 / gamma1)
        log_spike = np.log1p(-rho) + _log_normal(r, 0.0, 1.0 / gamma1)
        pi = np.exp(log_slab - np.logaddexp(log_slab, log_spike))

    xhat = pi * m
    # pi*(v + m^2) - xhat^2, rearranged to avoid cancellation
    var = pi * v + pi * (1.0 - pi) * m**2
    return xhat, var


def denoise(prior: BernoulliGaussianPrior, r1, gamma1, warn=True):
    """Posterior mean and averaged posterior precision.

    Returns ``(xhat1, eta1)`` where ``1/eta1`` is the mean of the
    componentwise posterior variances. When every variance vanishes (e.g.
    ``rho == 0``) eta1 is clamped to ``ETA_MAX`` and a
    :class:`DegeneratePriorWarning` is issued.
    """
    xhat, var = posterior_moments(prior, r1, gamma1)
    mean_var = np.mean(var)
    if not mean_var > 1.0 / ETA_MAX:
        if warn:
            warnings.warn("posterior variance vanished; clamping eta1",
                          DegeneratePriorWarning, stacklevel=2)
        return xhat, ETA_MAX
    return xhat, 1.0 / mean_var


def extrinsic(xhat, eta, r, gamma, gamma_min=GAMMA_MIN):
    """Divide the belief N(xhat, 1/eta) by the incoming message N(r, 1/gamma).

    Returns ``(r_new, gamma_new, clamped)``. When ``eta - gamma`` falls below
    ``gamma_min`` the precision is clamped to ``gamma_min`` and the mean is
    recomputed with the clamped value.
    """
    if not (eta > 0 and gamma > 0):
        raise ValueError("eta and gamma must be positive")
    gamma_new = eta - gamma
    clamped = not gamma_new >= gamma_min
    if clamped:
        gamma_new = gamma_min
    r_new = (eta * np.asarray(xhat, dtype=float) - gamma * np.asarray(r, dtype=float)) / gamma_new
    return r_new, gamma_new, clamped
