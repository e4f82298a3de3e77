"""Dense linear-algebra kernels.

Thin, validated wrappers over LAPACK (through numpy) for the SVD and the
quantities derived from it. Every function is pure; randomness only enters
through an explicitly passed ``numpy.random.Generator``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import InvalidInputError, NoNonzeroSingularValueError

DEFAULT_TOL = 1e-12


def as_matrix(M, name: str = "matrix") -> np.ndarray:
    """Return ``M`` as a finite 2-D float array or raise."""
    arr = np.asarray(M, dtype=float)
    if arr.ndim != 2:
        raise InvalidInputError(f"{name} must be 2-D, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise InvalidInputError(f"{name} has non-finite entries")
    return arr


def as_vector(v, name: str = "vector") -> np.ndarray:
    arr = np.asarray(v, dtype=float)
    if arr.ndim != 1:
        raise InvalidInputError(f"{name} must be 1-D, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise InvalidInputError(f"{name} has non-finite entries")
    return arr


@dataclass(frozen=True)
class SvdFactorization:
    """Thin SVD ``M = U diag(s) V^T`` with ``s`` sorted descending."""

    left: np.ndarray  # n x r
    singular_values: np.ndarray  # r
    right: np.ndarray  # p x r

    @property
    def rank_bound(self) -> int:
        return self.singular_values.shape[0]

    def cutoff(self, tol: float = DEFAULT_TOL) -> float:
        n, p = self.left.shape[0], self.right.shape[0]
        smax = self.singular_values[0] if self.singular_values.size else 0.0
        return tol * smax * max(n, p)

    def rank(self, tol: float = DEFAULT_TOL) -> int:
        return int(np.count_nonzero(self.singular_values > self.cutoff(tol)))

    def reconstruct(self) -> np.ndarray:
        return (self.left * self.singular_values) @ self.right.T


def svd(M) -> SvdFactorization:
    A = as_matrix(M)
    U, s, Vt = np.linalg.svd(A, full_matrices=False)
    return SvdFactorization(U, s, Vt.T)


def pseudoinverse(M, tol: float = DEFAULT_TOL) -> np.ndarray:
    """Moore-Penrose inverse with relative cutoff ``tol * smax * max(rows, cols)``."""
    if tol < 0:
        raise InvalidInputError("tol must be nonnegative")
    f = svd(M)
    keep = f.singular_values > f.cutoff(tol)
    inv = np.zeros_like(f.singular_values)
    inv[keep] = 1.0 / f.singular_values[keep]
    return (f.right * inv) @ f.left.T


def spectral_norm(M) -> float:
    A = as_matrix(M)
    if A.size == 0:
        return 0.0
    return float(np.linalg.svd(A, compute_uv=False)[0])


def min_nonzero_singular(M, tol: float = DEFAULT_TOL) -> float:
    """Smallest singular value above the pseudoinverse cutoff."""
    f = svd(M)
    s = f.singular_values
    kept = s[s > f.cutoff(tol)]
    if kept.size == 0:
        raise NoNonzeroSingularValueError("no singular value above the cutoff")
    return float(kept[-1])


def sample_haar_orthogonal(p: int, rng: np.random.Generator) -> np.ndarray:
    """Haar-distributed p x p orthogonal matrix.

    QR of a Gaussian matrix, with columns flipped so that R has a positive
    diagonal. Without the sign fix the result is orthogonal but not Haar.
    """
    if p < 1:
        raise InvalidInputError("p must be at least 1")
    Z = rng.standard_normal((p, p))
    Q, R = np.linalg.qr(Z)
    d = np.sign(np.diag(R))
    d[d == 0] = 1.0
    return Q * d


def penrose_residuals(M, P) -> tuple[float, float, float, float]:
    """Frobenius residuals of the four Moore-Penrose conditions, relative.

    Returns (||MPM - M||, ||PMP - P||, ||MP - (MP)^T||, ||PM - (PM)^T||),
    each divided by max(1, norm of the reference term).
    """
    M = as_matrix(M)
    P = as_matrix(P, "candidate inverse")
    MP = M @ P
    PM = P @ M

    def rel(diff, ref):
        return float(np.linalg.norm(diff) / max(1.0, np.linalg.norm(ref)))

    return (
        rel(MP @ M - M, M),
        rel(PM @ P - P, P),
        rel(MP - MP.T, MP),
        rel(PM - PM.T, PM),
    )


def symmetric_sqrt(S) -> np.ndarray:
    """Symmetric square root of a PSD matrix via its SVD."""
    f = svd(S)
    return (f.left * np.sqrt(f.singular_values)) @ f.left.T
