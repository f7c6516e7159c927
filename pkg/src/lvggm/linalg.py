"""Dense symmetric linear algebra and Gaussian sampling primitives.

Symmetric matrices are plain ``numpy.ndarray`` objects; :func:`as_symmetric`
validates and symmetrizes them on the way in.
"""

from __future__ import annotations

from typing import NamedTuple

import numpy as np


class InputError(ValueError):
    """Raised for malformed matrix input (non-finite, non-square, ...)."""


class NotPositiveDefinite(np.linalg.LinAlgError):
    """Raised when a matrix required to be positive definite is not."""


class EigenDecomposition(NamedTuple):
    values: np.ndarray  # descending
    vectors: np.ndarray  # orthonormal columns


def as_symmetric(A, name: str = "matrix") -> np.ndarray:
    A = np.asarray(A, dtype=float)
    if A.ndim == 0:
        A = A.reshape(1, 1)
    if A.ndim != 2 or A.shape[0] != A.shape[1] or A.shape[0] < 1:
        raise InputError(f"{name} must be a non-empty square matrix, got shape {A.shape}")
    if not np.all(np.isfinite(A)):
        raise InputError(f"{name} has non-finite entries")
    return 0.5 * (A + A.T)


def sym_eig(A) -> EigenDecomposition:
    """Full spectral decomposition with eigenvalues sorted in descending order."""
    A = as_symmetric(A)
    w, V = np.linalg.eigh(A)
    return EigenDecomposition(w[::-1].copy(), V[:, ::-1].copy())


def spectral_norm(A) -> float:
    A = np.asarray(A, dtype=float)
    if A.size == 0:
        return 0.0
    return float(np.max(np.abs(np.linalg.eigvalsh(0.5 * (A + A.T)))))


def min_eig(A) -> float:
    return float(np.linalg.eigvalsh(0.5 * (np.asarray(A) + np.asarray(A).T))[0])


def psd_inverse(A, eps: float | None = None) -> np.ndarray:
    """Inverse of a symmetric positive definite matrix via its spectrum.

    ``eps`` defaults to ``1e-12 * ||A||_2``; a smallest eigenvalue at or
    below it raises :class:`NotPositiveDefinite`.
    """
    w, V = sym_eig(A)
    if eps is None:
        eps = 1e-12 * max(abs(w[0]), abs(w[-1]))
    if w[-1] <= eps:
        raise NotPositiveDefinite(f"smallest eigenvalue {w[-1]:.3e} <= {eps:.3e}")
    inv = (V / w) @ V.T
    return 0.5 * (inv + inv.T)


def psd_sqrt(A, tol: float = 1e-12) -> np.ndarray:
    """Symmetric square root; tiny negative eigenvalues from roundoff are clipped."""
    w, V = sym_eig(A)
    scale = max(abs(w[0]), abs(w[-1]), 1e-300)
    if w[-1] < -tol * scale:
        raise NotPositiveDefinite(f"matrix is indefinite (eigenvalue {w[-1]:.3e})")
    return (V * np.sqrt(np.clip(w, 0.0, None))) @ V.T


def logdet_pd(A) -> float:
    sign, val = np.linalg.slogdet(A)
    if sign <= 0:
        raise NotPositiveDefinite("log-determinant of a non positive definite matrix")
    return float(val)


def mvn_sample(covariance, n: int, seed: int | np.random.Generator | None = None) -> np.ndarray:
    """Draw ``n`` zero-mean Gaussian rows with the given covariance.

    Uses the spectral square root, so positive semidefinite covariances are
    accepted; indefinite ones raise :class:`NotPositiveDefinite`.
    """
    root = psd_sqrt(covariance)
    if n < 0:
        raise InputError("sample count must be non-negative")
    rng = np.random.default_rng(seed)
    return rng.standard_normal((n, root.shape[0])) @ root
