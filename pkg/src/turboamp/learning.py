"""Conjugate Gamma/Beta learning of the model parameters between turbo rounds.

Precisions get Gamma(shape, rate) priors and probabilities Beta(c, d)
priors.  Each round the hard support estimate ``L_n > 0`` and the AMP means
stand in for the unknown states and coefficients; the next round uses the
inverse expected precision as variance and the expected probability as the
transition/activity parameter.
"""

from dataclasses import dataclass, field

import numpy as np

from .hmt import HmtParams
from .measurement import apply_A

# rates b_j for levels -1, 0, 1, 2, 3 with a_j = 1; deeper levels reuse the last
DEFAULT_LEVEL_RATES = (10.0, 1.0, 1.0, 0.1, 0.1)
GM_SMALL_RATE_FACTOR = 1e-6


def _pairs(x, n=None):
    x = np.asarray(x, dtype=float).reshape(-1, 2)
    if n is not None and x.shape[0] != n:
        raise ValueError(f"expected {n} (shape, rate) or (c, d) pairs, got {x.shape[0]}")
    return x


@dataclass
class HyperParams:
    """Gamma (shape, rate) and Beta (c, d) hyperparameters.

    ``gamma_level[j + 1]`` is the pair for level ``j``; in GM mode it is the
    large-variance pair and ``gamma_level_small`` the small-variance one.
    ``beta_trans11[j]`` / ``beta_trans00[j]`` belong to edges leaving level j.
    """

    gamma_noise: np.ndarray
    gamma_level: np.ndarray
    beta_root: np.ndarray
    beta_approx: np.ndarray
    beta_trans11: np.ndarray
    beta_trans00: np.ndarray
    gamma_level_small: np.ndarray = None

    def __post_init__(self):
        self.gamma_noise = np.asarray(self.gamma_noise, dtype=float).reshape(2)
        self.gamma_level = _pairs(self.gamma_level)
        self.beta_root = np.asarray(self.beta_root, dtype=float).reshape(2)
        self.beta_approx = np.asarray(self.beta_approx, dtype=float).reshape(2)
        self.beta_trans11 = _pairs(self.beta_trans11)
        self.beta_trans00 = _pairs(self.beta_trans00)
        if self.gamma_level_small is not None:
            self.gamma_level_small = _pairs(self.gamma_level_small, len(self.gamma_level))
        if len(self.beta_trans11) != len(self.beta_trans00):
            raise ValueError("beta_trans11 and beta_trans00 differ in length")
        for name, arr in vars(self).items():
            if arr is not None and np.any(arr <= 0):
                raise ValueError(f"hyperparameter {name} must be positive")

    @property
    def J(self):
        return len(self.gamma_level) - 1

    @classmethod
    def default(cls, tree, model="bg"):
        """Informative defaults for an image quad-tree.

        Beta pseudo-counts sum to the level sizes, with mean activity 1/N at
        the roots, 1 - 1e-6 for approximation coefficients, 0.5 for
        active-parent persistence and 1/N for inactive-parent persistence.
        Level variances start at b_j / a_j with a_j = 1.
        """
        N = tree.n_total
        sizes = np.array(tree.sizes, dtype=float)
        J = tree.J
        rates = [DEFAULT_LEVEL_RATES[min(k, len(DEFAULT_LEVEL_RATES) - 1)] for k in range(J + 1)]
        gamma_level = np.column_stack([np.ones(J + 1), rates])

        def beta(mean, total):
            return np.array([mean * total, (1.0 - mean) * total])

        n_trans = max(J - 1, 0)
        hp = cls(
            gamma_noise=(1.0, 1e-6),
            gamma_level=gamma_level,
            beta_root=beta(1.0 / N, sizes[1]),
            beta_approx=beta(1.0 - 1e-6, sizes[0]),
            beta_trans11=[beta(0.5, sizes[j + 1]) for j in range(n_trans)] or np.empty((0, 2)),
            beta_trans00=[beta(1.0 / N, sizes[j + 1]) for j in range(n_trans)]
            or np.empty((0, 2)),
        )
        if model == "gm":
            small = gamma_level.copy()
            small[:, 1] *= GM_SMALL_RATE_FACTOR
            hp.gamma_level_small = small
        return hp

    @classmethod
    def flat(cls, n, model="bg"):
        """Shared-parameter hyperpriors for plain BG-AMP without tree structure.

        Meant for :func:`flat_tree`, whose level -1 is empty, so the level -1
        and approximation pairs are placeholders.
        """
        hp = cls(
            gamma_noise=(1.0, 1e-6),
            gamma_level=[[1.0, 1.0], [1e-10, 1e-10]],
            beta_root=(0.1 * n, 0.9 * n),
            beta_approx=(1.0, 1.0),
            beta_trans11=np.empty((0, 2)),
            beta_trans00=np.empty((0, 2)),
        )
        if model == "gm":
            hp.gamma_level_small = hp.gamma_level * [1.0, GM_SMALL_RATE_FACTOR]
        return hp

    def expected_variances(self):
        """b/a per level (inverse of the prior mean precision)."""
        return self.gamma_level[:, 1] / self.gamma_level[:, 0]

    def expected_small_variances(self):
        return self.gamma_level_small[:, 1] / self.gamma_level_small[:, 0]

    def expected_params(self):
        """HMT parameters at their prior means."""
        return HmtParams(
            pi_root=beta_mean(*self.beta_root),
            pi_approx=beta_mean(*self.beta_approx),
            pi11=[beta_mean(c, d) for c, d in self.beta_trans11] or [0.5],
            pi00=[beta_mean(c, d) for c, d in self.beta_trans00] or [0.5],
        )


def beta_mean(c, d):
    return c / (c + d)


def gamma_posterior(shape, rate, count, sum_sq):
    """Gamma posterior on a precision after ``count`` zero-mean Gaussians."""
    return shape + 0.5 * count, rate + 0.5 * sum_sq


def beta_posterior(c, d, successes, trials):
    return c + successes, d + trials - successes


@dataclass
class SupportEstimate:
    """Hard support ``L_n > 0`` split by level, plus parent-child edge counts.

    ``active_sets[j + 1]`` lists the active indices of level ``j``;
    ``trials11[j]`` counts edges leaving level j whose parent is active and
    ``succ11[j]`` those whose child is active too.  ``trials00``/``succ00``
    are the same for inactive parents and inactive children.
    """

    active: np.ndarray
    active_sets: list
    level_sizes: np.ndarray
    succ11: np.ndarray
    trials11: np.ndarray
    succ00: np.ndarray
    trials00: np.ndarray
    k_counts: np.ndarray = field(init=False)

    def __post_init__(self):
        self.k_counts = np.array([len(s) for s in self.active_sets])


def extract_support(llr, tree):
    active = np.asarray(llr) > 0
    active_sets = [idx[active[idx]] for idx in tree.level_sets]
    n_trans = max(tree.J - 1, 0)
    succ11, trials11 = np.zeros(n_trans, int), np.zeros(n_trans, int)
    succ00, trials00 = np.zeros(n_trans, int), np.zeros(n_trans, int)
    for j in range(n_trans):
        parents = tree.level(j)
        kids = tree.children[parents]
        valid = kids >= 0
        par_on = np.broadcast_to(active[parents][:, None], kids.shape)[valid]
        kid_on = active[kids[valid]]
        trials11[j] = par_on.sum()
        succ11[j] = (par_on & kid_on).sum()
        trials00[j] = (~par_on).sum()
        succ00[j] = (~par_on & ~kid_on).sum()
    sizes = np.array([len(s) for s in tree.level_sets])
    return SupportEstimate(active, active_sets, sizes, succ11, trials11, succ00, trials00)


def update_precisions(hyper, support, mu):
    """Per-level variances b_hat / a_hat from the active means of each level."""
    mu = np.asarray(mu)
    out = np.empty(len(hyper.gamma_level))
    for k, (a, b) in enumerate(hyper.gamma_level):
        idx = support.active_sets[k]
        a_hat, b_hat = gamma_posterior(a, b, idx.size, np.sum(mu[idx] ** 2))
        out[k] = b_hat / a_hat
    return out


def update_transitions(hyper, support):
    pi_approx = beta_mean(*beta_posterior(*hyper.beta_approx, support.k_counts[0],
                                          support.level_sizes[0]))
    pi_root = beta_mean(*beta_posterior(*hyper.beta_root, support.k_counts[1],
                                        support.level_sizes[1]))
    pi11 = [beta_mean(*beta_posterior(c, d, s, t))
            for (c, d), s, t in zip(hyper.beta_trans11, support.succ11, support.trials11)]
    pi00 = [beta_mean(*beta_posterior(c, d, s, t))
            for (c, d), s, t in zip(hyper.beta_trans00, support.succ00, support.trials00)]
    return HmtParams(pi_root, pi_approx, pi11 or [0.5], pi00 or [0.5])


def update_noise(hyper, y, op, mu):
    """Noise variance from the residual ``y - A mu``."""
    r = np.asarray(y) - apply_A(op, mu)
    a_hat, b_hat = gamma_posterior(*hyper.gamma_noise, r.size, r @ r)
    return b_hat / a_hat


def update_gm_variances(hyper, llr, mu, tree):
    """Per-level (large, small) variances for the two-Gaussian model.

    The large-variance precision learns from coefficients with ``L_n > 0``,
    the small one from the rest, each with its own Gamma hyperprior.
    """
    active = np.asarray(llr) > 0
    mu = np.asarray(mu)
    large = np.empty(len(tree.level_sets))
    small = np.empty(len(tree.level_sets))
    for k, idx in enumerate(tree.level_sets):
        on = idx[active[idx]]
        off = idx[~active[idx]]
        a, b = gamma_posterior(*hyper.gamma_level[k], on.size, np.sum(mu[on] ** 2))
        large[k] = b / a
        a, b = gamma_posterior(*hyper.gamma_level_small[k], off.size, np.sum(mu[off] ** 2))
        small[k] = b / a
    return large, small
