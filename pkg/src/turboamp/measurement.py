"""Gaussian compressive measurement operator ``A = Phi Psi``.

Phi is drawn with a numpy ``Generator`` on the PCG64 bit generator; the
normals come from ``Generator.standard_normal`` (ziggurat method).  Entries
are i.i.d. N(0, 1/M), so columns of A have squared norm close to one.  The
wavelet synthesis Psi is applied with the fast Haar transform, never stored.
"""

import json
import warnings
from dataclasses import dataclass

import numpy as np

from .wavelet import forward_dwt2, inverse_dwt2

GENERATOR = "numpy.PCG64/standard_normal-ziggurat"


@dataclass
class MeasurementOperator:
    """Dense Phi plus the wavelet used for Psi.

    ``J`` is the number of Haar levels; ``J = 0`` means Psi is the identity
    and coefficient vectors are plain signal vectors.
    """

    phi: np.ndarray
    J: int = 0
    seed: object = None
    kind: str = "gaussian"

    @property
    def m(self):
        return self.phi.shape[0]

    @property
    def n(self):
        return self.phi.shape[1]

    @property
    def side(self):
        return int(round(np.sqrt(self.n)))

    def synthesize(self, theta):
        """Psi theta, flattened."""
        if self.J == 0:
            return np.asarray(theta, dtype=float)
        return inverse_dwt2(theta, self.J).ravel()

    def analyze(self, x):
        """Psi^T x for a flattened or square signal."""
        x = np.asarray(x, dtype=float)
        if self.J == 0:
            return x.ravel()
        return forward_dwt2(x.reshape(self.side, self.side), self.J)

    def header(self):
        return {"m": self.m, "n": self.n, "J": self.J, "seed": self.seed,
                "kind": self.kind, "generator": GENERATOR}

    def save_header(self, path):
        with open(path, "w") as fh:
            json.dump(self.header(), fh, indent=2)


def _phi(m, n, seed):
    phi = np.random.default_rng(seed).standard_normal((m, n))
    phi /= np.sqrt(m)
    return phi


def gen_operator(m, n, seed, J=0, allow_oversampled=False):
    """Draw a Gaussian operator with ``m`` rows for length-``n`` signals.

    ``m > n`` raises unless ``allow_oversampled`` is set, in which case only
    a warning is emitted.
    """
    if m < 1 or n < 1:
        raise ValueError(f"invalid operator shape {m}x{n}")
    if m > n:
        if not allow_oversampled:
            raise ValueError(f"m={m} exceeds n={n}")
        warnings.warn(f"oversampled operator: m={m} > n={n}")
    if J:
        side = int(round(np.sqrt(n)))
        if side * side != n:
            raise ValueError(f"n={n} is not a square image size")
    return MeasurementOperator(_phi(m, n, seed), J=J, seed=seed)


def orthonormal_operator(n, seed=None, J=0):
    """Square orthonormal Phi (identity when ``seed`` is None), for tests."""
    if seed is None:
        phi = np.eye(n)
        kind = "identity"
    else:
        q, r = np.linalg.qr(np.random.default_rng(seed).standard_normal((n, n)))
        phi = q * np.sign(np.diag(r))
        kind = "orthonormal"
    return MeasurementOperator(phi, J=J, seed=seed, kind=kind)


def load_operator(path):
    """Regenerate an operator from a header written by ``save_header``."""
    with open(path) as fh:
        h = json.load(fh)
    if h.get("generator", GENERATOR) != GENERATOR:
        raise ValueError(f"unknown generator {h['generator']!r}")
    if h["kind"] == "gaussian":
        return gen_operator(h["m"], h["n"], h["seed"], J=h["J"], allow_oversampled=True)
    if h["kind"] in ("identity", "orthonormal"):
        return orthonormal_operator(h["n"], h["seed"], J=h["J"])
    raise ValueError(f"unknown operator kind {h['kind']!r}")


@dataclass
class Observation:
    y: np.ndarray
    sigma2: float = 0.0


def measure(op, image, sigma2=0.0, seed=None):
    """y = Phi x + w with w ~ N(0, sigma2 I)."""
    x = np.asarray(image, dtype=float).ravel()
    if x.size != op.n:
        raise ValueError(f"image has {x.size} pixels, operator expects {op.n}")
    if sigma2 < 0:
        raise ValueError("noise variance must be non-negative")
    y = op.phi @ x
    if sigma2 > 0:
        y = y + np.sqrt(sigma2) * np.random.default_rng(seed).standard_normal(op.m)
    return Observation(y, float(sigma2))


def apply_A(op, coeffs):
    theta = np.asarray(coeffs, dtype=float)
    if theta.shape != (op.n,):
        raise ValueError(f"expected {op.n} coefficients, got shape {theta.shape}")
    return op.phi @ op.synthesize(theta)


def apply_At(op, residual):
    r = np.asarray(residual, dtype=float)
    if r.shape != (op.m,):
        raise ValueError(f"expected a length-{op.m} residual, got shape {r.shape}")
    return op.analyze(op.phi.T @ r)


def dense_A(op):
    """Materialize A column by column (small operators only)."""
    return np.column_stack([apply_A(op, e) for e in np.eye(op.n)])
