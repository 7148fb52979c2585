"""First-order AMP for independent, non-identical spike-and-slab priors."""

import logging
from dataclasses import dataclass, replace

import numpy as np

from .denoiser import denoise_batch
from .measurement import apply_A, apply_At

logger = logging.getLogger(__name__)

C_FLOOR = 1e-12
C_INIT_FACTOR = 100.0
DIVERGENCE_RATIO = 10.0
# residuals below this fraction of ||y|| are too small for growth to mean divergence
DIVERGENCE_FLOOR = 1e-3
LBP_MAX_EDGES = 10_000


@dataclass
class AmpState:
    mu: np.ndarray
    v: np.ndarray
    z: np.ndarray
    c: float
    xi: np.ndarray
    llr: np.ndarray
    iter: int = 0

    def copy(self):
        return replace(self, mu=self.mu.copy(), v=self.v.copy(), z=self.z.copy(),
                       xi=self.xi.copy(), llr=self.llr.copy())


class AmpDivergence(RuntimeError):
    """Raised when the AMP recursion blows up.

    ``state`` holds the last iterate that passed the checks.
    """

    def __init__(self, msg, state):
        super().__init__(msg)
        self.state = state


def cold_start(op, y, prior, c_init_factor=C_INIT_FACTOR):
    n = op.n
    return AmpState(mu=np.zeros(n), v=np.zeros(n), z=np.array(y, dtype=float),
                    c=c_init_factor * prior.max_variance,
                    xi=np.zeros(n), llr=np.zeros(n))


def amp_step(state, op, y, prior, sigma2, onsager=True):
    """One AMP sweep: pseudo-data, denoise, corrected residual, new c.

    With ``onsager=False`` the memory term is dropped and the sweep reduces
    to an iterative-thresholding step with the MMSE shrinkage.
    """
    M = op.m
    xi = apply_At(op, state.z) + state.mu
    # overflow on a blown-up iterate is caught by the finiteness check below
    with np.errstate(over="ignore", invalid="ignore"):
        out = denoise_batch(xi, state.c, prior)
        z = y - apply_A(op, out.mean)
        if onsager:
            z = z + state.z * (out.deriv.sum() / M)
        c = max(sigma2 + out.variance.sum() / M, C_FLOOR)
    new = AmpState(out.mean, out.variance, z, c, xi, out.llr, state.iter + 1)
    if not all(np.all(np.isfinite(a)) for a in (new.mu, new.v, z, c)):
        raise AmpDivergence(f"non-finite AMP iterate at iteration {new.iter} (c={c:g})", state)
    return new


def amp_run(op, y, prior, sigma2, max_iter=10, tol=1e-5, warm=None,
            c_init_factor=C_INIT_FACTOR, onsager=True):
    """Iterate :func:`amp_step` until the mean moves less than ``tol``.

    A cold start uses ``z = y``, ``mu = 0`` and a large initial ``c``;
    ``warm`` resumes from a previous state (its ``iter`` counter is reset).
    """
    y = np.asarray(y, dtype=float)
    state = warm.copy() if warm is not None else cold_start(op, y, prior, c_init_factor)
    state.iter = 0
    znorm = np.linalg.norm(state.z)
    floor = DIVERGENCE_FLOOR * np.linalg.norm(y)
    for _ in range(max_iter):
        new = amp_step(state, op, y, prior, sigma2, onsager=onsager)
        new_znorm = np.linalg.norm(new.z)
        if new_znorm > DIVERGENCE_RATIO * max(znorm, floor) and new_znorm > floor:
            raise AmpDivergence(
                f"residual norm grew from {znorm:.3g} to {new_znorm:.3g} at iteration {new.iter}",
                state)
        delta = np.linalg.norm(new.mu - state.mu)
        logger.debug("amp iter %d: c=%.4g |dmu|=%.4g", new.iter, new.c, delta)
        state, znorm = new, new_znorm
        if delta < tol:
            break
    return state


@dataclass
class LbpResult:
    mu: np.ndarray          # marginal posterior means
    v: np.ndarray           # marginal posterior variances
    mu_edge: np.ndarray     # (M, N) means of theta_n -> g_m messages
    v_edge: np.ndarray      # (M, N) variances of theta_n -> g_m messages
    z_edge: np.ndarray      # (M, N) z_mn
    c_edge: np.ndarray      # (M, N) c_mn
    xi_edge: np.ndarray     # (M, N) leave-one-out pseudo-data
    llr: np.ndarray
    converged: bool = False  # edge means settled below ``tol``
    iters: int = 0


def _gauss_product(A, z_edge, c_edge):
    """Combine the Gaussian factor messages N(theta; z/A, c/A^2) per column.

    Returns the all-factor and leave-one-factor-out (mean, variance) pairs.
    A column whose product is empty (a single factor excluded) gets an
    infinite variance.
    """
    prec_terms = A**2 / c_edge
    mean_terms = A * z_edge / c_edge
    prec = prec_terms.sum(axis=0)
    num = mean_terms.sum(axis=0)
    prec_loo = prec[None, :] - prec_terms
    num_loo = num[None, :] - mean_terms
    with np.errstate(divide="ignore", invalid="ignore"):
        var_loo = np.where(prec_loo > 0, 1.0 / prec_loo, np.inf)
        xi_loo = np.where(prec_loo > 0, num_loo * var_loo, 0.0)
    return num / prec, 1.0 / prec, xi_loo, var_loo


def _prior_only(prior, shape):
    # moments of the prior itself, for messages with no measurement factor
    if hasattr(prior, "sigma2"):
        var = prior.lam * prior.sigma2
    else:
        var = prior.lam * prior.sigma2_large + (1 - prior.lam) * prior.sigma2_small
    return np.zeros(shape), np.broadcast_to(var, shape).copy()


def lbp_oracle(A, y, prior, sigma2, iters=200, tol=1e-12):
    """Full per-edge Gaussian-message loopy BP on a small dense system.

    Every ``theta_n -> g_m`` message keeps its own mean and variance, every
    ``g_m -> theta_n`` message its own ``z_mn`` and ``c_mn``; the variable
    update excludes the destination factor.  O(MN) work per iteration, so
    only meant for cross-checking :func:`amp_run` on toy problems.
    """
    A = np.asarray(A, dtype=float)
    y = np.asarray(y, dtype=float)
    M, N = A.shape
    if M * N > LBP_MAX_EDGES:
        raise ValueError(f"lbp_oracle is limited to M*N <= 1e4, got {M}x{N}")
    if sigma2 <= 0:
        raise ValueError("lbp_oracle needs a positive noise variance")

    # per-edge copy of the prior, so the denoiser broadcasts over (M, N)
    edge_prior = replace(prior, **{k: np.broadcast_to(v, (M, N)) if np.ndim(v) else v
                                   for k, v in vars(prior).items()})
    mu_edge, v_edge = _prior_only(edge_prior, (M, N))
    converged = False
    done = 0
    # a diverging recursion overflows; that is reported through ``converged``
    with np.errstate(over="ignore", invalid="ignore"):
        for done in range(1, iters + 1):
            s = A * mu_edge
            z_edge = y[:, None] - (s.sum(axis=1)[:, None] - s)
            w = A**2 * v_edge
            c_edge = sigma2 + (w.sum(axis=1)[:, None] - w)
            _, _, xi_loo, var_loo = _gauss_product(A, z_edge, c_edge)
            finite = np.isfinite(var_loo)
            new_mu, new_v = _prior_only(edge_prior, (M, N))
            if finite.any():
                out = denoise_batch(xi_loo[finite], var_loo[finite],
                                    replace(prior, **{k: np.broadcast_to(v, (M, N))[finite]
                                                      if np.ndim(v) else v
                                                      for k, v in vars(prior).items()}))
                new_mu[finite] = out.mean
                new_v[finite] = out.variance
            change = np.max(np.abs(new_mu - mu_edge))
            mu_edge, v_edge = new_mu, new_v
            if not np.isfinite(change):
                break
            if change < tol:
                converged = True
                break

    s = A * mu_edge
    z_edge = y[:, None] - (s.sum(axis=1)[:, None] - s)
    w = A**2 * v_edge
    c_edge = sigma2 + (w.sum(axis=1)[:, None] - w)
    xi, var, xi_loo, _ = _gauss_product(A, z_edge, c_edge)
    with np.errstate(over="ignore", invalid="ignore"):
        out = denoise_batch(xi, var, prior)
    return LbpResult(out.mean, out.variance, mu_edge, v_edge, z_edge, c_edge,
                     xi_loo, out.llr, converged, done)
