"""Scalar MMSE denoisers for the spike-and-slab and two-Gaussian priors.

Both denoisers take pseudo-data ``xi`` observed as ``theta + N(0, c)`` and
return the posterior mean F, posterior variance G, the derivative dF/dxi
and the extrinsic log-likelihood ratio of the activity state.  All
quantities are written in terms of the posterior activity probability
``p = 1 / (1 + tau)`` where ``log tau`` is evaluated in log space and passed
through a logistic function, so large ``|log tau|`` saturates cleanly.
Inputs broadcast, so the same calls serve scalars and whole coefficient
vectors.
"""

from dataclasses import dataclass

import numpy as np
from scipy.special import expit

LAMBDA_EPS = 1e-12


def clamp_lambda(lam):
    return np.clip(lam, LAMBDA_EPS, 1.0 - LAMBDA_EPS)


@dataclass
class BgPrior:
    """lambda * N(0, sigma2) + (1 - lambda) * delta(0)."""

    lam: np.ndarray
    sigma2: np.ndarray

    def __post_init__(self):
        self.lam = clamp_lambda(np.asarray(self.lam, dtype=float))
        self.sigma2 = np.asarray(self.sigma2, dtype=float)
        if np.any(self.sigma2 <= 0):
            raise ValueError("active-coefficient variance must be positive")

    @property
    def max_variance(self):
        return float(np.max(self.sigma2))


@dataclass
class GmPrior:
    """lambda * N(0, sigma2_large) + (1 - lambda) * N(0, sigma2_small)."""

    lam: np.ndarray
    sigma2_large: np.ndarray
    sigma2_small: np.ndarray

    def __post_init__(self):
        self.lam = clamp_lambda(np.asarray(self.lam, dtype=float))
        self.sigma2_large = np.asarray(self.sigma2_large, dtype=float)
        self.sigma2_small = np.asarray(self.sigma2_small, dtype=float)
        if np.any(self.sigma2_small < 0) or np.any(self.sigma2_large < self.sigma2_small):
            raise ValueError("need sigma2_large >= sigma2_small >= 0")

    @property
    def max_variance(self):
        return float(np.max(self.sigma2_large))


@dataclass
class DenoiserOutput:
    mean: np.ndarray
    variance: np.ndarray
    deriv: np.ndarray
    llr: np.ndarray


def _check_xi(xi):
    xi = np.asarray(xi, dtype=float)
    if not np.all(np.isfinite(xi)):
        raise ValueError("pseudo-data contains non-finite values")
    return xi


def bg_denoise(xi, c, prior):
    xi = _check_xi(xi)
    if np.any(np.asarray(c) <= 0):
        raise ValueError("effective noise variance must be positive")
    lam, s2 = prior.lam, prior.sigma2
    alpha = s2 / (s2 + c)
    zeta = alpha / (2.0 * c)
    # llr = log N(xi; 0, s2 + c) - log N(xi; 0, c)
    llr = zeta * xi**2 - 0.5 * np.log1p(s2 / c)
    log_odds = llr + np.log(lam) - np.log1p(-lam)  # = -log tau
    p = expit(log_odds)
    q = expit(-log_odds)
    mean = alpha * xi * p
    pq = p * q
    variance = alpha * c * p + pq * (alpha * xi) ** 2
    deriv = alpha * (p + 2.0 * zeta * xi**2 * pq)
    return DenoiserOutput(mean, variance, deriv, llr)


def gm_denoise(xi, c, prior):
    xi = _check_xi(xi)
    c = np.asarray(c, dtype=float)
    lam, sl, ss = prior.lam, prior.sigma2_large, prior.sigma2_small
    if np.any(c < 0) or np.any(c + ss <= 0):
        raise ValueError("need c >= 0 and c + sigma2_small > 0")
    vl = c + sl
    vs = c + ss
    alpha_l = sl / vl
    alpha_s = ss / vs
    zeta = (sl - ss) / (2.0 * vl * vs)
    llr = zeta * xi**2 - 0.5 * np.log(vl / vs)
    log_odds = llr + np.log(lam) - np.log1p(-lam)
    p = expit(log_odds)
    q = expit(-log_odds)
    gap = alpha_l - alpha_s
    w = alpha_s + gap * p
    mean = xi * w
    pq = p * q
    variance = c * w + pq * (xi * gap) ** 2
    deriv = w + 2.0 * zeta * xi**2 * gap * pq
    return DenoiserOutput(mean, variance, deriv, llr)


def denoise_batch(xi, c, prior):
    """Vectorized denoise of ``xi`` against per-coefficient ``prior``."""
    xi = np.asarray(xi, dtype=float)
    for name, arr in vars(prior).items():
        if np.ndim(arr) and np.shape(arr) != xi.shape:
            raise ValueError(f"prior field {name} has shape {np.shape(arr)}, expected {xi.shape}")
    if isinstance(prior, BgPrior):
        return bg_denoise(xi, c, prior)
    if isinstance(prior, GmPrior):
        return gm_denoise(xi, c, prior)
    raise TypeError(f"unsupported prior {type(prior).__name__}")
