"""Dense symmetric-matrix primitives: norms, eigendecomposition, pseudo-inverse, rank truncation."""

from __future__ import annotations

from typing import NamedTuple

import numpy as np

# Relative eigenvalue cutoff below which a PSD matrix is treated as singular.
DEFAULT_PINV_TOL = 1e-10


class SymEig(NamedTuple):
    """Eigendecomposition of a symmetric matrix with eigenvalues in descending order.

    Column j of ``eigenvectors`` pairs with ``eigenvalues[j]``, so
    ``V @ diag(w) @ V.T`` reconstructs the input.
    """

    eigenvalues: np.ndarray
    eigenvectors: np.ndarray


def as_matrix(a) -> np.ndarray:
    """Coerce to a non-empty 2-D float64 array, rejecting non-finite entries."""
    m = np.asarray(a, dtype=np.float64)
    if m.ndim != 2 or m.shape[0] < 1 or m.shape[1] < 1:
        raise ValueError(f"expected a non-empty 2-D matrix, got shape {m.shape}")
    if not np.all(np.isfinite(m)):
        raise ValueError("matrix contains non-finite entries")
    return m


def _require_square(m: np.ndarray, op: str) -> None:
    if m.shape[0] != m.shape[1]:
        raise ValueError(f"{op} requires a square matrix, got shape {m.shape}")


def frobenius_norm(a) -> float:
    """sqrt of the sum of squared entries."""
    return float(np.linalg.norm(as_matrix(a), "fro"))


def sym_eig(a) -> SymEig:
    """Eigendecomposition of a symmetric matrix, eigenvalues sorted descending.

    The input is symmetrized as (A + A^T)/2 before factorization, so small
    numerical asymmetry is tolerated.
    """
    m = as_matrix(a)
    _require_square(m, "sym_eig")
    w, v = np.linalg.eigh((m + m.T) / 2.0)
    return SymEig(eigenvalues=w[::-1].copy(), eigenvectors=v[:, ::-1].copy())


def pseudo_inverse(a, tol: float = DEFAULT_PINV_TOL) -> np.ndarray:
    """Pseudo-inverse of a symmetric PSD matrix via its eigendecomposition.

    Eigenvalues at or below ``tol`` times the largest eigenvalue are treated
    as zero.  Negative eigenvalues (numerical noise in PSD inputs) are clamped
    to zero first so they can never produce huge reciprocals.
    """
    if tol < 0:
        raise ValueError("tol must be non-negative")
    w, v = sym_eig(a)
    lam = np.clip(w, 0.0, None)
    cutoff = tol * (lam[0] if lam.size else 0.0)
    inv = np.zeros_like(lam)
    keep = lam > cutoff
    inv[keep] = 1.0 / lam[keep]
    return (v * inv) @ v.T


def pinv_sqrt(a, tol: float = DEFAULT_PINV_TOL) -> np.ndarray:
    """Symmetric PSD square root of the pseudo-inverse: V diag(lambda^-1/2) V^T."""
    if tol < 0:
        raise ValueError("tol must be non-negative")
    w, v = sym_eig(a)
    lam = np.clip(w, 0.0, None)
    cutoff = tol * (lam[0] if lam.size else 0.0)
    inv_sqrt = np.zeros_like(lam)
    keep = lam > cutoff
    inv_sqrt[keep] = 1.0 / np.sqrt(lam[keep])
    return (v * inv_sqrt) @ v.T


def rank_k_truncate(a, k: int) -> np.ndarray:
    """Sum of the top-k eigenpairs; the best rank-k approximation for PSD input."""
    m = as_matrix(a)
    _require_square(m, "rank_k_truncate")
    n = m.shape[0]
    if not 1 <= k <= n:
        raise ValueError(f"k must be in [1, {n}], got {k}")
    w, v = sym_eig(m)
    vk = v[:, :k]
    return (vk * w[:k]) @ vk.T
