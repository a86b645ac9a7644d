"""Class-weighted ridge regression for the linear output layer."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg


class DegenerateClassError(ValueError):
    """A class has no training samples, so its weight is undefined."""


class SingularSystemError(np.linalg.LinAlgError):
    pass


@dataclass(frozen=True)
class ClassWeighting:
    per_class: np.ndarray
    per_sample: np.ndarray


def class_weights(labels, n_classes: int) -> ClassWeighting:
    """Inverse-frequency weights ``s_c = N / (C * n_c)``.

    With this normalization the per-sample weights sum to N and a balanced
    label set gets unit weights.
    """
    labels = np.asarray(labels, dtype=int)
    if labels.size and (labels.min() < 0 or labels.max() >= n_classes):
        raise ValueError(f"labels must lie in [0, {n_classes})")
    counts = np.bincount(labels, minlength=n_classes)
    empty = np.flatnonzero(counts == 0)
    if empty.size:
        raise DegenerateClassError(f"classes {empty.tolist()} have no samples")
    per_class = labels.size / (n_classes * counts.astype(float))
    return ClassWeighting(per_class, per_class[labels])


def uniform_weights(labels, n_classes: int) -> ClassWeighting:
    labels = np.asarray(labels, dtype=int)
    return ClassWeighting(np.ones(n_classes), np.ones(labels.size))


@dataclass
class RidgeProblem:
    """``H`` already carries the constant bias column."""

    H: np.ndarray
    Y: np.ndarray
    lam: float
    sample_weights: np.ndarray


def solve_output_weights(problem: RidgeProblem) -> np.ndarray:
    return solve_ridge(problem.H, problem.Y, problem.sample_weights, problem.lam)


def solve_ridge(H, Y, sample_weights, lam: float) -> np.ndarray:
    """Minimise ``sum_i s_i ||H_i W - Y_i||^2 + lam ||W||_F^2``.

    Solves ``(H^T diag(s) H + lam I) W = H^T diag(s) Y`` by Cholesky.
    """
    H = np.asarray(H, dtype=float)
    Y = np.asarray(Y, dtype=float)
    s = np.asarray(sample_weights, dtype=float)
    if H.ndim != 2 or Y.ndim != 2 or H.shape[0] != Y.shape[0] or s.shape != (H.shape[0],):
        raise ValueError(f"inconsistent shapes H{H.shape} Y{Y.shape} s{s.shape}")
    if lam < 0:
        raise ValueError("lam must be non-negative")
    if not (np.all(np.isfinite(H)) and np.all(np.isfinite(Y))):
        raise FloatingPointError("non-finite entries in ridge problem")
    SH = s[:, None] * H
    gram = H.T @ SH
    gram[np.diag_indices_from(gram)] += lam
    rhs = SH.T @ Y
    try:
        factor = scipy.linalg.cho_factor(gram, lower=True, check_finite=False)
    except np.linalg.LinAlgError:
        raise SingularSystemError("weighted Gram matrix is not positive definite") from None
    diag = np.abs(np.diag(factor[0]))
    if lam == 0 and diag.min() ** 2 <= diag.max() ** 2 * gram.shape[0] * np.finfo(float).eps:
        raise SingularSystemError("weighted Gram matrix is numerically singular")
    W = scipy.linalg.cho_solve(factor, rhs, check_finite=False)
    if not np.all(np.isfinite(W)):
        raise FloatingPointError("non-finite ridge solution")
    return W


def weighted_mse(logits, Y, sample_weights) -> float:
    """``(1/N) sum_i s_i ||logits_i - Y_i||^2``."""
    logits = np.asarray(logits, dtype=float)
    Y = np.asarray(Y, dtype=float)
    s = np.asarray(sample_weights, dtype=float)
    if logits.shape != Y.shape or s.shape != (Y.shape[0],):
        raise ValueError(f"shape mismatch: logits {logits.shape}, Y {Y.shape}, s {s.shape}")
    r = logits - Y
    return float(np.dot(s, np.einsum("ij,ij->i", r, r)) / Y.shape[0])


def weighted_loss(H, W, Y, sample_weights) -> float:
    H = np.asarray(H, dtype=float)
    if H.shape[1] != np.shape(W)[0]:
        raise ValueError(f"H has {H.shape[1]} columns but W has {np.shape(W)[0]} rows")
    return weighted_mse(H @ W, Y, sample_weights)
