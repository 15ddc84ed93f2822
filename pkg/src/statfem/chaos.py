"""Non-intrusive polynomial chaos with normalized probabilists' Hermite bases.

The basis is orthonormal under the standard Gaussian measure, so the PC
mean is the zeroth coefficient and the covariance is the sum of outer
products of the remaining coefficients.
"""

from __future__ import annotations

import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Callable

import numpy as np
import scipy.linalg as sla

from .errors import RankDeficientError, SampleSolveError, StatFEMError

MAX_TERMS = 1_000_000


def hermite_eval(order: int, xi):
    """Normalized Hermite polynomial ``He_n(xi) / sqrt(n!)``.

    Uses the recurrence ``psi_{n+1} = (xi psi_n - sqrt(n) psi_{n-1}) / sqrt(n + 1)``.
    """
    if order < 0:
        raise ValueError("order must be non-negative")
    return hermite_table(order, xi)[..., order]


def hermite_table(max_order: int, xi) -> np.ndarray:
    """All normalized Hermite values up to ``max_order``; shape ``xi.shape + (max_order + 1,)``."""
    xi = np.asarray(xi, dtype=float)
    out = np.empty(xi.shape + (max_order + 1,))
    out[..., 0] = 1.0
    if max_order >= 1:
        out[..., 1] = xi
    for n in range(1, max_order):
        out[..., n + 1] = (xi * out[..., n] - math.sqrt(n) * out[..., n - 1]) / math.sqrt(n + 1)
    return out


@dataclass(frozen=True)
class MultiIndexSet:
    """Total-order multi-indices in graded lexicographic order."""

    dim: int
    order: int
    indices: np.ndarray   # (P + 1, dim)

    def __len__(self):
        return self.indices.shape[0]

    @property
    def n_terms(self):
        return len(self)

    def evaluate(self, xi) -> np.ndarray:
        """Design matrix ``A[s, j] = Psi_j(xi_s)`` for germs of shape (S, M) or (S,)."""
        xi = np.asarray(xi, dtype=float)
        if xi.ndim == 1:
            xi = xi[:, None] if self.dim == 1 else xi[None, :]
        if xi.shape[1] != self.dim:
            raise ValueError(f"germ dimension {xi.shape[1]} does not match basis dimension {self.dim}")
        table = hermite_table(self.order, xi)                 # (S, M, p + 1)
        A = np.ones((xi.shape[0], len(self)))
        for i in range(self.dim):
            A *= table[:, i, self.indices[:, i]]
        return A


def _count(M, p):
    return math.comb(M + p, p)


def _compositions(total, parts):
    """Multi-indices of ``parts`` entries summing to ``total``, first entry descending."""
    if parts == 1:
        yield (total,)
        return
    for first in range(total, -1, -1):
        for rest in _compositions(total - first, parts - 1):
            yield (first,) + rest


def multi_index_set(M: int, p: int) -> MultiIndexSet:
    if M < 1 or p < 0:
        raise ValueError("need M >= 1 and p >= 0")
    n = _count(M, p)
    if n > MAX_TERMS:
        raise OverflowError(f"(M + p)! / (M! p!) = {n} terms exceeds the limit of {MAX_TERMS}")
    idx = [a for degree in range(p + 1) for a in _compositions(degree, M)]
    return MultiIndexSet(M, p, np.array(idx, dtype=np.int64).reshape(n, M))


# ----------------------------------------------------------------------
# Lognormal input
# ----------------------------------------------------------------------
def lognormal_transform(mu_E: float, sigma_E: float) -> tuple[float, float]:
    """Mean and std of ``ln E`` for a lognormal ``E`` with mean ``mu_E`` and std ``sigma_E``."""
    if mu_E <= 0 or sigma_E < 0:
        raise ValueError("need mu_E > 0 and sigma_E >= 0")
    mu_k = math.log(mu_E**2 / math.sqrt(mu_E**2 + sigma_E**2))
    sigma_k = math.sqrt(math.log1p(sigma_E**2 / mu_E**2))
    return mu_k, sigma_k


@dataclass(frozen=True)
class LognormalInput:
    """Lognormal Young's modulus ``E = exp(mu_k + sigma_k xi)`` (GPa)."""

    mean: float
    std: float
    order: int = 4

    def __post_init__(self):
        if self.mean <= 0 or self.std < 0:
            raise ValueError("lognormal input needs mean > 0 and std >= 0")

    @property
    def log_params(self):
        return lognormal_transform(self.mean, self.std)

    def sample(self, xi):
        mu_k, s_k = self.log_params
        return np.exp(mu_k + s_k * np.asarray(xi, dtype=float))

    def truncated(self, xi):
        """Evaluate the truncated Hermite expansion of ``E`` at ``xi``."""
        c = lognormal_pc(self)
        return hermite_table(self.order, xi) @ c


def lognormal_pc(inp: LognormalInput) -> np.ndarray:
    """Coefficients ``mu_E sigma_k^i / sqrt(i!)`` of ``E`` in the normalized basis."""
    _, s_k = inp.log_params
    i = np.arange(inp.order + 1)
    return inp.mean * s_k**i / np.sqrt([math.factorial(int(k)) for k in i])


# ----------------------------------------------------------------------
# Moments and regression
# ----------------------------------------------------------------------
@dataclass
class SampleSet:
    """Germ draws ``xi`` (S, M) and aligned responses (S, n_dof)."""

    xi: np.ndarray
    responses: np.ndarray
    seed: int | None = None

    def __post_init__(self):
        self.xi = np.asarray(self.xi, dtype=float)
        if self.xi.ndim == 1:
            self.xi = self.xi[:, None]
        self.responses = np.atleast_2d(np.asarray(self.responses, dtype=float))
        if self.xi.shape[0] != self.responses.shape[0]:
            raise ValueError("germ draws and responses are not aligned")

    def __len__(self):
        return self.xi.shape[0]


def mc_moments(samples) -> tuple[np.ndarray, np.ndarray]:
    """Sample mean and unbiased covariance of the responses."""
    Z = samples.responses if isinstance(samples, SampleSet) else np.atleast_2d(samples)
    if Z.shape[0] < 2:
        raise ValueError("need at least two samples")
    mean = Z.mean(axis=0)
    dev = Z - mean
    return mean, dev.T @ dev / (Z.shape[0] - 1)


@dataclass
class PCExpansion:
    """Coefficient matrix (n_dof, P + 1) over a normalized Hermite basis."""

    coefficients: np.ndarray
    basis: MultiIndexSet

    @property
    def mean(self):
        return self.coefficients[:, 0]

    def evaluate(self, xi) -> np.ndarray:
        """Surrogate responses at germs ``xi``; shape (S, n_dof)."""
        return self.basis.evaluate(xi) @ self.coefficients.T

    def to_dict(self):
        return {
            "M": self.basis.dim,
            "p": self.basis.order,
            "multi_indices": self.basis.indices.tolist(),
            "n_dof": int(self.coefficients.shape[0]),
            "coefficients": self.coefficients.ravel().tolist(),
        }

    @classmethod
    def from_dict(cls, data):
        basis = multi_index_set(int(data["M"]), int(data["p"]))
        stored = np.asarray(data["multi_indices"], dtype=np.int64).reshape(basis.indices.shape)
        if not np.array_equal(stored, basis.indices):
            raise StatFEMError("stored multi-indices do not follow graded lexicographic order")
        coeffs = np.asarray(data["coefficients"], dtype=float).reshape(int(data["n_dof"]), len(basis))
        return cls(coeffs, basis)

    def save(self, path):
        Path(path).write_text(json.dumps(self.to_dict()))
        return Path(path)

    @classmethod
    def load(cls, path):
        path = Path(path)
        if not path.exists():
            raise StatFEMError(f"PC expansion file not found: {path}")
        return cls.from_dict(json.loads(path.read_text()))


def pc_regression(samples: SampleSet, basis: MultiIndexSet) -> PCExpansion:
    """Least-squares PC coefficients via a pivoted QR factorization of the design matrix."""
    A = basis.evaluate(samples.xi)
    S, n = A.shape
    if S < n:
        raise RankDeficientError(f"{S} samples cannot determine {n} coefficients; draw at least {n}")
    Q, R, piv = sla.qr(A, mode="economic", pivoting=True)
    diag = np.abs(np.diag(R))
    if diag[-1] <= max(S, n) * np.finfo(float).eps * diag[0]:
        raise RankDeficientError(
            f"design matrix is rank deficient ({S} samples, {n} terms); use more or distinct samples"
        )
    c = np.empty((n, samples.responses.shape[1]))
    c[piv] = sla.solve_triangular(R, Q.T @ samples.responses)
    return PCExpansion(c.T.copy(), basis)


def pc_moments(expansion: PCExpansion) -> tuple[np.ndarray, np.ndarray]:
    """Mean (coefficient 0) and covariance ``sum_{j>=1} u_j u_j^T``."""
    U = expansion.coefficients[:, 1:]
    return expansion.coefficients[:, 0].copy(), U @ U.T


# ----------------------------------------------------------------------
# Propagation
# ----------------------------------------------------------------------
def draw_germs(n: int, dim: int = 1, seed=None) -> np.ndarray:
    return np.random.default_rng(seed).standard_normal((n, dim))


def run_samples(solver: Callable[[float], np.ndarray], inp: LognormalInput, xi,
                threads: int = 1, truncated: bool = False) -> np.ndarray:
    """Solve once per germ value; rows keep the germ order regardless of thread count."""
    xi = np.asarray(xi, dtype=float).reshape(len(xi), -1)
    E = inp.truncated(xi[:, 0]) if truncated else inp.sample(xi[:, 0])

    def one(s):
        try:
            return np.asarray(solver(float(E[s])), dtype=float)
        except Exception as exc:  # noqa: BLE001 - re-raised with sample context
            raise SampleSolveError(s, float(xi[s, 0]), exc) from exc

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            rows = list(pool.map(one, range(len(E))))
    else:
        rows = [one(s) for s in range(len(E))]
    return np.vstack(rows)


def propagate_prior(solver: Callable[[float], np.ndarray], inp: LognormalInput,
                    basis: MultiIndexSet, n_samples: int | None = None, seed=None,
                    threads: int = 1, truncated: bool = False,
                    return_samples: bool = False):
    """Regression-based PC expansion of ``solver(E)`` for lognormal ``E``.

    ``n_samples`` defaults to ``2 (P + 1)``. Germs are seeded standard
    normal draws; ``truncated=True`` feeds the solver the truncated Hermite
    expansion of ``E`` instead of the exact exponential.
    """
    if basis.dim != 1:
        raise ValueError("the lognormal modulus is driven by a single germ (M = 1)")
    S = 2 * len(basis) if n_samples is None else int(n_samples)
    xi = draw_germs(S, 1, seed)
    Z = run_samples(solver, inp, xi, threads=threads, truncated=truncated)
    samples = SampleSet(xi, Z, seed)
    expansion = pc_regression(samples, basis)
    return (expansion, samples) if return_samples else expansion
