"""Orthonormal 2D Haar transform and the wavelet quad-tree index.

Coefficient vectors use a level-major layout: the approximation block
(level -1) first, then wavelet levels 0 (coarsest, tree roots) through
J-1 (finest, leaves).  Within a wavelet level the three subbands are stored
in the order (horizontal, vertical, diagonal), each one row-major.  For a
``d x d`` image with ``n0 = d / 2**J`` the block sizes are therefore
``n0**2`` for level -1 and ``3 * (n0 * 2**j)**2`` for level ``j``.

The coefficient at (subband b, row r, col c) of level j has the four
children (b, 2r + u, 2c + v), u, v in {0, 1}, at level j + 1.
"""

from dataclasses import dataclass, field

import numpy as np

SUBBANDS = ("horizontal", "vertical", "diagonal")


def _is_pow2(n):
    return n >= 1 and (n & (n - 1)) == 0


def _check_geometry(d, J):
    if not _is_pow2(int(d)):
        raise ValueError(f"image side {d} is not a power of two")
    if J < 1:
        raise ValueError(f"need at least one decomposition level, got J={J}")
    if 2**J > d:
        raise ValueError(f"J={J} levels is too many for a {d}x{d} image")


def level_sizes(d, J):
    """Number of coefficients at levels -1, 0, ..., J-1."""
    n0 = d >> J
    return [n0 * n0] + [3 * (n0 << j) ** 2 for j in range(J)]


def _analysis_pass(x):
    a = x[0::2, 0::2]
    b = x[0::2, 1::2]
    c = x[1::2, 0::2]
    d = x[1::2, 1::2]
    ll = 0.5 * (a + b + c + d)
    h = 0.5 * (a - b + c - d)
    v = 0.5 * (a + b - c - d)
    g = 0.5 * (a - b - c + d)
    return ll, (h, v, g)


def _synthesis_pass(ll, details):
    h, v, g = details
    n = ll.shape[0]
    x = np.empty((2 * n, 2 * n), dtype=np.result_type(ll, h, float))
    x[0::2, 0::2] = 0.5 * (ll + h + v + g)
    x[0::2, 1::2] = 0.5 * (ll - h + v - g)
    x[1::2, 0::2] = 0.5 * (ll + h - v - g)
    x[1::2, 1::2] = 0.5 * (ll - h - v + g)
    return x


def forward_dwt2(image, J):
    """J-level orthonormal Haar analysis of a square power-of-two image.

    Returns the coefficient vector in the level-major layout described in the
    module docstring.
    """
    x = np.asarray(image, dtype=float)
    if x.ndim != 2 or x.shape[0] != x.shape[1]:
        raise ValueError(f"expected a square image, got shape {x.shape}")
    _check_geometry(x.shape[0], J)

    details = []
    ll = x
    for _ in range(J):
        ll, det = _analysis_pass(ll)
        details.append(det)
    # details[0] is the finest level; the vector runs coarse to fine
    parts = [ll.ravel()]
    for det in reversed(details):
        parts.extend(band.ravel() for band in det)
    return np.concatenate(parts)


def inverse_dwt2(coeffs, J):
    """Inverse of :func:`forward_dwt2`; returns the ``d x d`` image."""
    theta = np.asarray(coeffs, dtype=float)
    if theta.ndim != 1:
        raise ValueError("coefficients must be a flat vector")
    d = int(round(np.sqrt(theta.size)))
    if d * d != theta.size:
        raise ValueError(f"{theta.size} coefficients do not form a square image")
    _check_geometry(d, J)

    n0 = d >> J
    ll = theta[: n0 * n0].reshape(n0, n0)
    pos = n0 * n0
    n = n0
    for _ in range(J):
        bands = []
        for _ in SUBBANDS:
            bands.append(theta[pos : pos + n * n].reshape(n, n))
            pos += n * n
        ll = _synthesis_pass(ll, bands)
        n *= 2
    return ll


@dataclass
class QuadTreeIndex:
    """Parent/child structure over a coefficient vector.

    ``parent[n]`` is -1 for approximation coefficients and tree roots.
    ``children`` is an ``(N, K)`` table padded with -1 (``K = 4`` for
    quad-trees).  ``level_sets[j + 1]`` holds the indices at level ``j``.
    """

    n_total: int
    levels: np.ndarray
    parent: np.ndarray
    children: np.ndarray
    level_sets: list = field(repr=False)

    @property
    def J(self):
        return len(self.level_sets) - 1

    def level(self, j):
        """Indices W_j of level ``j`` (``j = -1`` is the approximation)."""
        return self.level_sets[j + 1]

    @property
    def sizes(self):
        return [len(s) for s in self.level_sets]

    @classmethod
    def from_parents(cls, parent, levels):
        """Build an index from an explicit parent array and level labels.

        Used for arbitrary forests (e.g. small test trees); the children
        table is derived from ``parent``.
        """
        parent = np.asarray(parent, dtype=np.int64)
        levels = np.asarray(levels, dtype=np.int64)
        n = parent.size
        if levels.shape != (n,):
            raise ValueError("parent and levels must have the same length")
        for k in range(n):
            p = parent[k]
            if p < 0:
                if levels[k] > 0:
                    raise ValueError(f"node {k} at level {levels[k]} has no parent")
            elif levels[p] != levels[k] - 1 or levels[k] < 1:
                raise ValueError(f"node {k} and its parent {p} are not on adjacent levels")
        counts = np.bincount(parent[parent >= 0], minlength=n)
        width = max(int(counts.max()) if n else 0, 1)
        children = np.full((n, width), -1, dtype=np.int64)
        fill = np.zeros(n, dtype=np.int64)
        for k in range(n):
            p = parent[k]
            if p >= 0:
                children[p, fill[p]] = k
                fill[p] += 1
        J = int(levels.max()) + 1 if n else 0
        level_sets = [np.flatnonzero(levels == j) for j in range(-1, max(J, 1))]
        return cls(n, levels, parent, children, level_sets)


def build_tree_index(d, J):
    """Quad-tree index for a ``d x d`` image decomposed into ``J`` levels."""
    _check_geometry(d, J)
    sizes = level_sizes(d, J)
    N = d * d
    offsets = np.concatenate([[0], np.cumsum(sizes)])
    n0 = d >> J

    levels = np.empty(N, dtype=np.int64)
    parent = np.full(N, -1, dtype=np.int64)
    children = np.full((N, 4), -1, dtype=np.int64)
    level_sets = []
    for k, j in enumerate(range(-1, J)):
        idx = np.arange(offsets[k], offsets[k + 1])
        levels[idx] = j
        level_sets.append(idx)

    for j in range(J - 1):
        n = n0 << j
        par = offsets[j + 1] + np.arange(3 * n * n).reshape(3, n, n)
        kid = offsets[j + 2] + np.arange(3 * 4 * n * n).reshape(3, n, 2, n, 2)
        # kid[b, r, u, c, v] is the child (2r+u, 2c+v) of par[b, r, c]
        kid = kid.transpose(0, 1, 3, 2, 4).reshape(3 * n * n, 4)
        children[par.ravel()] = kid
        parent[kid] = par.ravel()[:, None]

    return QuadTreeIndex(N, levels, parent, children, level_sets)


def flat_tree(n):
    """Structure-free index: every coefficient is an isolated level-0 root.

    Decoding over it leaves all activity priors equal, which turns the turbo
    engine into plain AMP with shared, learned parameters.
    """
    children = np.full((n, 4), -1, dtype=np.int64)
    return QuadTreeIndex(n, np.zeros(n, dtype=np.int64), np.full(n, -1, dtype=np.int64),
                         children, [np.arange(0), np.arange(n)])
