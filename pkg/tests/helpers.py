"""Shared generators and oracles for the test suite."""

from pathlib import Path

import numpy as np

from turboamp.wavelet import build_tree_index

DATA = Path(__file__).parent / "data"
CAMERAMAN = DATA / "cameraman128.pgm"


def haar_matrix(d, J):
    """Dense orthonormal synthesis matrix, built from the 1D Haar basis by Kronecker products.

    Independent of the butterfly code: column k is the image of the k-th basis
    vector in the package's coefficient order.
    """
    def haar_1d_level(n):
        # averaging rows followed by differencing rows
        h = np.zeros((n, n))
        for i in range(n // 2):
            h[i, 2 * i] = h[i, 2 * i + 1] = 1 / np.sqrt(2)
            h[n // 2 + i, 2 * i] = 1 / np.sqrt(2)
            h[n // 2 + i, 2 * i + 1] = -1 / np.sqrt(2)
        return h

    cols = []
    n0 = d >> J
    # approximation block
    for r in range(n0):
        for c in range(n0):
            cols.append(_basis_image(d, J, "ll", J, r, c, haar_1d_level))
    for j in range(J):
        lev = J - j  # number of analysis passes that produced this level
        n = n0 << j
        for band in ("h", "v", "g"):
            for r in range(n):
                for c in range(n):
                    cols.append(_basis_image(d, J, band, lev, r, c, haar_1d_level))
    return np.column_stack(cols)


def _basis_image(d, J, band, lev, r, c, haar_1d_level):
    # 1D synthesis vectors for scale ``lev``: scaling and wavelet functions
    def vectors(idx, kind):
        size = d >> lev
        e = np.zeros(size)
        e[idx] = 1.0
        low = np.concatenate([e, np.zeros(size)])
        high = np.concatenate([np.zeros(size), e])
        vec = (low if kind == "low" else high)
        n = 2 * size
        vec = haar_1d_level(n).T @ vec
        while n < d:
            n *= 2
            vec = haar_1d_level(n).T @ np.concatenate([vec, np.zeros(n // 2)])
        return vec

    # horizontal detail differences along columns, vertical along rows
    row_kind, col_kind = {"ll": ("low", "low"), "h": ("low", "high"),
                          "v": ("high", "low"), "g": ("high", "high")}[band]
    return np.outer(vectors(r, row_kind), vectors(c, col_kind)).ravel()


def tree_sparse_signal(d, J, rng, p_root=0.5, p_child=0.7, level_var=(4.0, 1.0, 0.25, 0.0625, 0.015625)):
    """Exactly tree-sparse coefficients: active subtrees hang off active roots.

    Every approximation coefficient is active; a wavelet root is active with
    probability ``p_root``; a child of an active parent is active with
    probability ``p_child`` and children of inactive parents are zero.
    """
    tree = build_tree_index(d, J)
    theta = np.zeros(tree.n_total)
    active = np.zeros(tree.n_total, dtype=bool)
    active[tree.level(-1)] = True
    roots = tree.level(0)
    active[roots] = rng.random(roots.size) < p_root
    for j in range(1, J):
        idx = tree.level(j)
        active[idx] = active[tree.parent[idx]] & (rng.random(idx.size) < p_child)
    for j in range(-1, J):
        idx = tree.level(j)
        sd = np.sqrt(level_var[min(j + 1, len(level_var) - 1)])
        theta[idx] = np.where(active[idx], sd * rng.standard_normal(idx.size), 0.0)
    return theta, active, tree


def read_pgm(path):
    raw = Path(path).read_bytes()
    parts = raw.split(maxsplit=4)
    w, h = int(parts[1]), int(parts[2])
    return np.frombuffer(raw[-w * h:], dtype=np.uint8).reshape(h, w).astype(float)


def _log_normal(x, var):
    return -0.5 * np.log(2 * np.pi * var) - 0.5 * x * x / var


def _component(xi, c, var, log_weight):
    """Log integrand of ``weight * N(theta; 0, var) * N(xi; theta, c)`` with quadrature settings.

    Returns (logf, log scale, interval, quad keywords).  The scale is the
    integrand at its mode, which keeps the quadrature in range.
    """
    mode = xi * var / (var + c)
    width = np.sqrt(var * c / (var + c))

    def logf(t):
        return log_weight + _log_normal(t, var) + _log_normal(xi - t, c)

    kw = dict(epsabs=0.0, epsrel=1e-13, limit=200, points=[mode])
    return logf, logf(mode), (mode - 40 * width, mode + 40 * width), kw


def _posterior_quad(xi, c, comps, points=()):
    """Posterior mean and variance of a mixture of Gaussian components and point masses.

    ``comps`` holds (log weight, variance) pairs integrated numerically;
    ``points`` holds (log mass, location) pairs added exactly.  The variance
    is a separate centred quadrature rather than m2 - m1^2, for accuracy.
    """
    from scipy.integrate import quad

    parts = [_component(xi, c, var, log_w) for log_w, var in comps]
    logs, masses, firsts = [], [], []
    for logf, scale, (lo, hi), kw in parts:
        logs.append(scale)
        masses.append(quad(lambda t: np.exp(logf(t) - scale), lo, hi, **kw)[0])
        firsts.append(quad(lambda t: t * np.exp(logf(t) - scale), lo, hi, **kw)[0])
    for log_mass, at in points:
        logs.append(log_mass)
        masses.append(1.0)
        firsts.append(at)
    w = np.exp(np.array(logs) - max(logs))
    mass = np.dot(w, masses)
    mean = np.dot(w, firsts) / mass

    cents = []
    for logf, scale, (lo, hi), kw in parts:
        cents.append(quad(lambda t: (t - mean) ** 2 * np.exp(logf(t) - scale), lo, hi, **kw)[0])
    cents.extend((at - mean) ** 2 for _, at in points)
    return float(mean), float(np.dot(w, cents) / mass)


def bg_posterior_quad(xi, c, lam, var):
    """Posterior mean and variance of theta under the spike-and-slab prior.

    The slab is integrated numerically; the spike at zero contributes its
    point mass (1 - lam) N(xi; 0, c) directly.
    """
    return _posterior_quad(xi, c, [(np.log(lam), var)],
                           points=[(np.log1p(-lam) + _log_normal(xi, c), 0.0)])


def gm_posterior_quad(xi, c, lam, var_large, var_small):
    """Posterior mean and variance of theta under the two-Gaussian mixture prior."""
    return _posterior_quad(xi, c, [(np.log(lam), var_large), (np.log1p(-lam), var_small)])


def hmt_enumerate(parent, levels, params, d):
    """Extrinsic state marginals by summing over every joint configuration.

    The joint weight is held as a tensor with one binary axis per node, so
    this is exponential in the node count and meant for forests of about 21
    nodes.  Level -1 nodes are independent with prior ``pi_approx``; level 0
    nodes are roots with prior ``pi_root``; deeper nodes follow the
    transition matrix of their parent's level.  A node's own evidence is
    constant on each slice ``s_n = k``, so it is divided out of that slice;
    nodes with a zero evidence entry get an explicit leave-one-out sum.
    Factors are multiplied in place without logs: with every probability in
    [0.01, 0.99] the smallest joint weight stays far above underflow.
    """
    parent = np.asarray(parent)
    levels = np.asarray(levels)
    d = np.asarray(d, dtype=float)
    K = parent.size

    def along(n, vec):
        shape = [1] * K
        shape[n] = 2
        return np.reshape(vec, shape)

    def joint(evidence):
        w = np.ones((2,) * K)
        for n in range(K):
            unary = np.asarray(evidence[n], dtype=float)
            if levels[n] == -1 or parent[n] < 0:
                p1 = params.pi_approx if levels[n] == -1 else params.pi_root
                unary = unary * np.array([1 - p1, p1])
            w *= along(n, unary)
            if parent[n] >= 0:
                p = parent[n]
                shape = [1] * K
                shape[p] = 2
                shape[n] = 2
                T = params.transition(levels[p])
                w *= (T if p < n else T.T).reshape(shape)
        return w

    def slice_sums(w, n):
        return w.reshape(2**n, 2, -1).sum(axis=(0, 2))

    # summing out the leading axes one at a time gives every slice sum of
    # the full joint in about two passes over the tensor
    lead = joint(d)
    full_sums = np.empty((K, 2))
    for n in range(K):
        full_sums[n] = lead.reshape(2, -1).sum(axis=1)
        lead = lead.sum(axis=0)

    out = np.empty((K, 2))
    for n in range(K):
        if np.all(d[n] > 0):
            sums = full_sums[n] / d[n]
        else:
            loo = d.copy()
            loo[n] = 1.0
            sums = slice_sums(joint(loo), n)
        out[n] = sums / sums.sum()
    return out


def random_forest(rng, max_nodes=21, max_children=4, with_approx=True):
    """Random forest with levels labelled from the parent depth."""
    parent, levels = [], []
    if with_approx:
        for _ in range(rng.integers(0, 3)):
            parent.append(-1)
            levels.append(-1)
    frontier = []
    for _ in range(rng.integers(1, 4)):
        if len(parent) >= max_nodes:
            break
        parent.append(-1)
        levels.append(0)
        frontier.append(len(parent) - 1)
    while frontier and len(parent) < max_nodes:
        node = frontier.pop(0)
        for _ in range(rng.integers(0, max_children + 1)):
            if len(parent) >= max_nodes:
                break
            parent.append(node)
            levels.append(levels[node] + 1)
            frontier.append(len(parent) - 1)
    return np.array(parent), np.array(levels)
