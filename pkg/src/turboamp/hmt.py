"""Sum-product decoding of binary hidden Markov trees over wavelet quad-trees.

One upward pass and one downward pass, vectorized level by level over all
trees of the forest at once.  The decoder returns extrinsic messages: the
belief about each state given every other node's evidence but not its own.
"""

from dataclasses import dataclass

import numpy as np

LLR_CLAMP = 30.0


@dataclass
class HmtParams:
    """Activity rates and per-level transition probabilities.

    ``pi11[j]`` / ``pi00[j]`` govern edges from level ``j`` to ``j + 1``.
    """

    pi_root: float
    pi_approx: float
    pi11: np.ndarray
    pi00: np.ndarray

    def __post_init__(self):
        self.pi11 = np.atleast_1d(np.asarray(self.pi11, dtype=float))
        self.pi00 = np.atleast_1d(np.asarray(self.pi00, dtype=float))
        probs = np.concatenate([[self.pi_root, self.pi_approx], self.pi11, self.pi00])
        if np.any(probs < 0) or np.any(probs > 1):
            raise ValueError("HMT probabilities must lie in [0, 1]")
        if self.pi11.shape != self.pi00.shape:
            raise ValueError("pi11 and pi00 must have one entry per level transition")

    def transition(self, j):
        """2x2 matrix T[s_parent, s_child] for edges leaving level ``j``."""
        a, b = self.pi00[j], self.pi11[j]
        return np.array([[a, 1.0 - a], [1.0 - b, b]])


@dataclass
class StateMessages:
    """Per-coefficient pmfs over s in {0, 1}, each of shape ``(N, 2)``."""

    d_in: np.ndarray
    h_out: np.ndarray = None
    posterior: np.ndarray = None


def _normalize(p):
    s = p.sum(axis=-1, keepdims=True)
    # contradictory hard evidence can zero out a message; fall back to uniform
    return np.where(s > 0, p / np.where(s > 0, s, 1.0), 0.5)


def llr_to_pmf(llr, clamp=LLR_CLAMP):
    """(P(s=0), P(s=1)) rows from log-likelihood ratios, clamped to +-clamp."""
    llr = np.asarray(llr, dtype=float)
    if np.any(np.isnan(llr)):
        raise ValueError("NaN log-likelihood ratio")
    llr = np.clip(llr, -clamp, clamp)
    p1 = 1.0 / (1.0 + np.exp(-llr))
    p0 = 1.0 / (1.0 + np.exp(llr))
    return np.stack([p0, p1], axis=-1)


def pmf_to_llr(pmf):
    pmf = np.asarray(pmf, dtype=float)
    with np.errstate(divide="ignore"):
        return np.log(pmf[..., 1]) - np.log(pmf[..., 0])


def _validate(tree, params, d):
    if d.shape != (tree.n_total, 2):
        raise ValueError(f"expected pmfs of shape ({tree.n_total}, 2), got {d.shape}")
    if np.any(d < 0) or not np.allclose(d.sum(axis=1), 1.0, atol=1e-12, rtol=0):
        raise ValueError("input messages are not valid pmfs")
    if params.pi11.size < max(tree.J - 1, 0):
        raise ValueError(f"need {tree.J - 1} transition levels, got {params.pi11.size}")


def hmt_decode(tree, params, d_in):
    """Extrinsic state messages for every coefficient of ``tree``.

    ``d_in`` is either a :class:`StateMessages` or an ``(N, 2)`` array of
    likelihood pmfs.  Approximation coefficients join no tree, so their
    extrinsic message is just the prior ``(1 - pi_approx, pi_approx)``.
    """
    d = np.asarray(d_in.d_in if isinstance(d_in, StateMessages) else d_in, dtype=float)
    _validate(tree, params, d)
    N, J = tree.n_total, tree.J
    parent, children = tree.parent, tree.children

    # up[n]: message from n to its parent, as a function of the parent state
    # below[n]: product of the children's up-messages into n
    up = np.ones((N, 2))
    below = np.ones((N, 2))
    for j in range(J - 1, 0, -1):
        nodes = tree.level(j)
        if nodes.size == 0:
            continue
        beta = _normalize(d[nodes] * below[nodes])
        up[nodes] = _normalize(beta @ params.transition(j - 1).T)
        par = parent[nodes]
        np.multiply.at(below, par, up[nodes])
        # renormalize the parents touched so products stay in range
        touched = np.unique(par)
        below[touched] = _normalize(below[touched])

    # down[n]: message from the parent side into n
    down = np.full((N, 2), 0.5)
    roots = tree.level(0)
    down[roots] = [1.0 - params.pi_root, params.pi_root]
    padded = np.vstack([up, np.ones((1, 2))])  # row -1 pads missing children
    for j in range(0, J - 1):
        nodes = tree.level(j)
        kids = children[nodes]
        if nodes.size == 0 or not np.any(kids >= 0):
            continue
        msgs = padded[kids]                      # (P, K, 2)
        K = msgs.shape[1]
        # product over siblings excluding each slot, via prefix/suffix products
        prefix = np.ones_like(msgs)
        suffix = np.ones_like(msgs)
        for k in range(1, K):
            prefix[:, k] = _normalize(prefix[:, k - 1] * msgs[:, k - 1])
            suffix[:, K - 1 - k] = _normalize(suffix[:, K - k] * msgs[:, K - k])
        own = (down[nodes] * d[nodes])[:, None, :]
        to_child = _normalize(own * prefix * suffix)          # (P, K, 2)
        into = _normalize(to_child @ params.transition(j))
        valid = kids >= 0
        down[kids[valid]] = into[valid]

    h_out = _normalize(down * below)
    approx = tree.level(-1)
    h_out[approx] = [1.0 - params.pi_approx, params.pi_approx]
    posterior = _normalize(h_out * d)
    return StateMessages(d, h_out, posterior)
