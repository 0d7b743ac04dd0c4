"""Training losses with analytic gradients w.r.t. the student tensor.

Every loss returns a (value, gradient) pair.  Teacher tensors and landmark
points are constants: no gradient flows into them.  The kernel-transfer
losses average over their residual entries so loss weights stay comparable
across dataset and landmark counts.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .matrix import as_matrix
from .nystrom import feature_matrix, landmark_matrix


class LossValueGrad(NamedTuple):
    value: float
    grad: np.ndarray


@dataclass
class LossWeights:
    """Weights of the distillation terms added to cross-entropy."""

    lambda_kda_before_fc: float = 0.0
    lambda_kda_after_fc: float = 0.0
    lambda_kd: float = 0.0
    lambda_rkd: float = 0.0
    kd_temperature: float = 4.0

    def __post_init__(self) -> None:
        weights = (self.lambda_kda_before_fc, self.lambda_kda_after_fc,
                   self.lambda_kd, self.lambda_rkd)
        if not all(np.isfinite(w) and w >= 0 for w in weights):
            raise ValueError("loss weights must be finite and non-negative")
        if not (np.isfinite(self.kd_temperature) and self.kd_temperature > 0):
            raise ValueError("kd_temperature must be positive")


def smoothed_l1(z):
    """Smoothed L1 with knee at |z| = 1: 0.5 z^2 inside, |z| - 0.5 outside.

    Returns (value, derivative); elementwise for array input.  The derivative
    is continuous at the knee and bounded by 1 in magnitude.
    """
    arr = np.asarray(z, dtype=np.float64)
    mag = np.abs(arr)
    quadratic = mag <= 1.0
    value = np.where(quadratic, 0.5 * arr * arr, mag - 0.5)
    deriv = np.where(quadratic, arr, np.sign(arr))
    if arr.ndim == 0:
        return float(value), float(deriv)
    return value, deriv


def kda_loss(x_s, x_t, d_s, d_t) -> LossValueGrad:
    """Smoothed-L1 penalty on entries of C_S - C_T, the partial Gram residual.

    C = X^T D holds the inner products of every example against the landmark
    points; matching the student's C to the teacher's transfers the full Gram
    matrix through the landmarks.  Gradient is w.r.t. the student features.
    """
    fs, ft, ds, dt = _check_pair(x_s, x_t, d_s, d_t)
    residual = fs.T @ ds - ft.T @ dt
    value, deriv = smoothed_l1(residual)
    n, m = residual.shape
    return LossValueGrad(float(value.mean()), ds @ deriv.T / (n * m))


def kda_loss_weighted(x_s, x_t, d_s, d_t, w_t_pinv_sqrt) -> LossValueGrad:
    """kda_loss with the residual right-multiplied by W_T^{+1/2}.

    The weighting matrix (symmetric PSD, m x m) folds the landmark Gram back
    into the objective, the variant closest to the plain low-rank form.
    """
    fs, ft, ds, dt = _check_pair(x_s, x_t, d_s, d_t)
    wh = as_matrix(w_t_pinv_sqrt)
    m = ds.shape[1]
    if wh.shape != (m, m):
        raise ValueError(f"weighting matrix must be {m} x {m}, got {wh.shape}")
    residual = (fs.T @ ds - ft.T @ dt) @ wh
    value, deriv = smoothed_l1(residual)
    n = fs.shape[1]
    return LossValueGrad(float(value.mean()), ds @ (deriv @ wh.T).T / (n * m))


def _check_pair(x_s, x_t, d_s, d_t):
    fs = feature_matrix(x_s)
    ft = feature_matrix(x_t)
    ds = landmark_matrix(d_s)
    dt = landmark_matrix(d_t)
    if fs.shape[1] != ft.shape[1]:
        raise ValueError(f"student has {fs.shape[1]} examples, teacher {ft.shape[1]}")
    if ds.shape[1] != dt.shape[1]:
        raise ValueError(f"student has {ds.shape[1]} landmarks, teacher {dt.shape[1]}")
    if ds.shape[0] != fs.shape[0]:
        raise ValueError(f"student landmark dim {ds.shape[0]} != feature dim {fs.shape[0]}")
    if dt.shape[0] != ft.shape[0]:
        raise ValueError(f"teacher landmark dim {dt.shape[0]} != feature dim {ft.shape[0]}")
    return fs, ft, ds, dt


def _log_softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=0, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=0, keepdims=True))


def kd_loss(logits_s, logits_t, temperature: float = 4.0) -> LossValueGrad:
    """Temperature-scaled KL divergence from teacher to student label distributions.

    Mean over examples of T^2 * KL(softmax(z_T/T) || softmax(z_S/T)); the T^2
    factor keeps gradient magnitudes comparable across temperatures.
    """
    zs = as_matrix(logits_s)
    zt = as_matrix(logits_t)
    if zs.shape != zt.shape:
        raise ValueError(f"logit shape mismatch: {zs.shape} vs {zt.shape}")
    if not temperature > 0:
        raise ValueError("temperature must be positive")
    log_ps = _log_softmax(zs / temperature)
    log_pt = _log_softmax(zt / temperature)
    pt = np.exp(log_pt)
    n = zs.shape[1]
    value = temperature ** 2 * float((pt * (log_pt - log_ps)).sum()) / n
    grad = temperature * (np.exp(log_ps) - pt) / n
    return LossValueGrad(value, grad)


def kd_squared_logit_loss(logits_s, logits_t) -> LossValueGrad:
    """Summed squared logit differences, sum_i ||z_S^i - z_T^i||^2.

    Equals the squared Frobenius norm of the partial-Gram residual when the
    landmark points are the one-hot axis vectors, which is how plain logit
    matching fits the kernel-transfer picture.
    """
    zs = as_matrix(logits_s)
    zt = as_matrix(logits_t)
    if zs.shape != zt.shape:
        raise ValueError(f"logit shape mismatch: {zs.shape} vs {zt.shape}")
    diff = zs - zt
    return LossValueGrad(float((diff * diff).sum()), 2.0 * diff)


def rkd_batch_loss(x_s_batch, x_t_batch) -> LossValueGrad:
    """Smoothed-L1 penalty between the within-batch Gram matrices.

    The mini-batch counterpart of kernel transfer: only the r x r similarity
    matrix of the current batch is matched.
    """
    fs = feature_matrix(x_s_batch)
    ft = feature_matrix(x_t_batch)
    if fs.shape[1] != ft.shape[1]:
        raise ValueError(f"batch size mismatch: {fs.shape[1]} vs {ft.shape[1]}")
    residual = fs.T @ fs - ft.T @ ft
    value, deriv = smoothed_l1(residual)
    r = fs.shape[1]
    return LossValueGrad(float(value.mean()), fs @ (deriv + deriv.T) / (r * r))


def cross_entropy_loss(logits, y) -> LossValueGrad:
    """Mean negative log softmax probability of the true class."""
    z = as_matrix(logits)
    labels = np.asarray(y, dtype=np.int64)
    n_classes, n = z.shape
    if labels.shape != (n,):
        raise ValueError(f"expected {n} labels, got shape {labels.shape}")
    if labels.size and (labels.min() < 0 or labels.max() >= n_classes):
        raise ValueError(f"labels must lie in [0, {n_classes - 1}]")
    log_p = _log_softmax(z)
    value = -float(log_p[labels, np.arange(n)].mean())
    grad = np.exp(log_p)
    grad[labels, np.arange(n)] -= 1.0
    return LossValueGrad(value, grad / n)
