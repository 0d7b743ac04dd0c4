"""Gram matrices and their low-rank approximations built from landmark points.

The approximation of an n x n Gram matrix K uses two much smaller matrices:
C (n x m, inner products of every example against m landmark points) and
W (m x m, the landmark Gram), giving K ~= C W_k^+ C^T where W_k is the rank-k
truncation of W.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .matrix import DEFAULT_PINV_TOL, as_matrix, frobenius_norm, pseudo_inverse, rank_k_truncate


@dataclass
class FeatureBlock:
    """Feature vectors as columns: ``features[:, i]`` is example i.

    ``layer_tag`` names the network layer that produced the features (empty
    for features that did not come from a network).
    """

    features: np.ndarray
    layer_tag: str = ""

    def __post_init__(self) -> None:
        self.features = as_matrix(self.features)

    @property
    def dim(self) -> int:
        return self.features.shape[0]

    @property
    def n(self) -> int:
        return self.features.shape[1]


def feature_matrix(x) -> np.ndarray:
    """Accept a FeatureBlock or a bare d x n array and return the array."""
    if isinstance(x, FeatureBlock):
        return x.features
    return as_matrix(x)


def landmark_matrix(d) -> np.ndarray:
    """Accept a LandmarkSet or a bare d x m array and return the array."""
    points = getattr(d, "points", d)
    return as_matrix(points)


@dataclass
class NystromApprox:
    """Low-rank kernel approximation C W_k^+ C^T from one set of landmark points."""

    c: np.ndarray        # n x m, examples against landmarks
    w: np.ndarray        # m x m, landmark Gram
    k: int               # truncation rank used for the pseudo-inverse
    w_k_pinv: np.ndarray  # m x m, cached pseudo-inverse of the rank-k truncation of W


def gram(x) -> np.ndarray:
    """Linear-kernel Gram matrix X^T X (n x n, symmetric PSD)."""
    f = feature_matrix(x)
    return f.T @ f


def build_nystrom(x, landmarks, k: int | None = None, tol: float = DEFAULT_PINV_TOL) -> NystromApprox:
    """Assemble C = X^T D, W = D^T D and cache the pseudo-inverse of W_k.

    ``k`` defaults to m (no truncation), the setting used for distillation;
    smaller ranks are exposed for approximation-quality studies.
    """
    f = feature_matrix(x)
    d = landmark_matrix(landmarks)
    if d.shape[0] != f.shape[0]:
        raise ValueError(
            f"landmark dimension {d.shape[0]} does not match feature dimension {f.shape[0]}"
        )
    m = d.shape[1]
    if k is None:
        k = m
    if not 1 <= k <= m:
        raise ValueError(f"rank k must be in [1, {m}], got {k}")
    w = d.T @ d
    return NystromApprox(c=f.T @ d, w=w, k=k, w_k_pinv=pseudo_inverse(rank_k_truncate(w, k), tol))


def reconstruct(approx: NystromApprox) -> np.ndarray:
    """Expand the approximation back to the full n x n matrix C W_k^+ C^T."""
    return approx.c @ approx.w_k_pinv @ approx.c.T


def relative_transfer_loss(k_s, k_t) -> float:
    """||K_S - K_T||_F / ||K_T||_F, the fraction of kernel structure not matched."""
    ks = as_matrix(k_s)
    kt = as_matrix(k_t)
    if ks.shape != kt.shape:
        raise ValueError(f"shape mismatch: {ks.shape} vs {kt.shape}")
    denom = frobenius_norm(kt)
    if denom == 0.0:
        raise ZeroDivisionError("reference Gram matrix is identically zero")
    return frobenius_norm(ks - kt) / denom
