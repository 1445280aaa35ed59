"""Losses and distances between matrices, subspaces and partitions."""
from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from typing import Dict, Optional, Tuple

import numpy as np
from scipy.optimize import linear_sum_assignment

from statecompress.errors import DimensionError, UndefinedRateError, ValidationError
from statecompress.kmeans import PartitionLabels

ORTHONORMAL_TOL = 1e-8
# exhaustive permutation search up to this many blocks
BRUTE_FORCE_MAX_BLOCKS = 8


def _same_shape(A, B):
    A = np.asarray(A, dtype=np.float64)
    B = np.asarray(B, dtype=np.float64)
    if A.shape != B.shape:
        raise DimensionError(f"shape mismatch: {A.shape} vs {B.shape}")
    return A, B


def l1_matrix_distance(A, B) -> float:
    """Entrywise absolute sum of ``A - B``."""
    A, B = _same_shape(A, B)
    return float(np.abs(A - B).sum())


def row_l1(A, B) -> np.ndarray:
    A, B = _same_shape(A, B)
    if A.ndim != 2:
        raise DimensionError("row distances need matrices")
    return np.abs(A - B).sum(axis=1)


def row_tv(A, B) -> Tuple[float, float]:
    """Average and maximum of the per-row l1 distances.

    Each per-row value is twice the total variation distance, so it lies in
    ``[0, 2]`` for stochastic inputs.
    """
    d = row_l1(A, B)
    return float(d.mean()), float(d.max())


def _orthonormal(U, name):
    U = np.asarray(U, dtype=np.float64)
    if U.ndim == 1:
        U = U[:, None]
    err = np.abs(U.T @ U - np.eye(U.shape[1])).max()
    if err > ORTHONORMAL_TOL:
        raise ValidationError(f"{name} columns are not orthonormal (max deviation {err:.3g})")
    return U


def principal_cosines(Uhat, U) -> np.ndarray:
    """Cosines of the principal angles between two column spaces, descending."""
    Uhat = _orthonormal(Uhat, "Uhat")
    U = _orthonormal(U, "U")
    if Uhat.shape != U.shape:
        raise DimensionError(f"basis shapes differ: {Uhat.shape} vs {U.shape}")
    s = np.linalg.svd(U.T @ Uhat, compute_uv=False)
    return np.clip(s, 0.0, 1.0)


def sin_theta(Uhat, U, norm: str = "spectral") -> float:
    """sin-theta distance between the spans of two orthonormal bases.

    Equals ``sqrt(1 - cos^2)`` of the principal angles (spectral: largest
    angle; Frobenius: root sum of squares).  It is evaluated as the norm of
    ``(I - U U^T) Uhat``, which keeps full precision for tiny angles where
    ``1 - cos^2`` cancels.
    """
    if norm not in ("spectral", "frobenius"):
        raise ValidationError(f"unknown norm {norm!r}")
    Uhat = _orthonormal(Uhat, "Uhat")
    U = _orthonormal(U, "U")
    if Uhat.shape != U.shape:
        raise DimensionError(f"basis shapes differ: {Uhat.shape} vs {U.shape}")
    resid = Uhat - U @ (U.T @ Uhat)
    if norm == "spectral":
        return float(min(1.0, np.linalg.norm(resid, 2)))
    return float(min(np.sqrt(U.shape[1]), np.linalg.norm(resid, "fro")))


def _as_partition(x) -> PartitionLabels:
    if isinstance(x, PartitionLabels):
        return x
    labels = np.asarray(x, dtype=np.int64)
    return PartitionLabels(labels, int(labels.max()) + 1 if labels.size else 1)


def misclassification_cost(truth, est) -> np.ndarray:
    """``C[j, s]`` is the fraction of true block ``j`` not placed in estimated block ``s``."""
    truth = _as_partition(truth)
    est = _as_partition(est)
    if truth.p != est.p:
        raise DimensionError(f"partitions cover {truth.p} and {est.p} states")
    r = max(truth.r, est.r)
    sizes = np.bincount(truth.labels, minlength=r).astype(np.float64)
    if (sizes[: truth.r] == 0).any():
        raise UndefinedRateError("a true block is empty")
    overlap = np.zeros((r, r))
    np.add.at(overlap, (truth.labels, est.labels), 1.0)
    cost = np.zeros((r, r))
    nz = sizes > 0
    cost[nz] = 1.0 - overlap[nz] / sizes[nz, None]
    return cost


def _brute_force(cost) -> float:
    r = cost.shape[0]
    rows = np.arange(r)
    return min(float(cost[rows, list(perm)].sum()) for perm in itertools.permutations(range(r)))


def _assignment(cost) -> float:
    rows, cols = linear_sum_assignment(cost)
    return float(cost[rows, cols].sum())


def misclassification_rate(truth, est, method: str = "auto") -> float:
    """Sum over true blocks of the misplaced fraction, minimized over block relabelings.

    ``method`` is ``"auto"``, ``"brute"`` or ``"assignment"``; the last two
    are exposed so they can be cross-checked.
    """
    cost = misclassification_cost(truth, est)
    if method == "auto":
        method = "brute" if cost.shape[0] <= BRUTE_FORCE_MAX_BLOCKS else "assignment"
    if method == "brute":
        return _brute_force(cost)
    if method == "assignment":
        return _assignment(cost)
    raise ValidationError(f"unknown method {method!r}")


def kl_row_divergence(u, v) -> float:
    """KL divergence ``sum u log(u / v)``; ``inf`` when ``v`` misses part of the support of ``u``."""
    u, v = _same_shape(u, v)
    if (u < 0).any() or (v < 0).any():
        raise ValidationError("probability vectors must be nonnegative")
    support = u > 0
    if (v[support] == 0).any():
        return float("inf")
    return float(np.sum(u[support] * np.log(u[support] / v[support])))


@dataclass
class LossReport:
    """Losses of one estimate against the truth; absent losses stay ``None``."""

    l1_total: Optional[float] = None
    avg_row_tv: Optional[float] = None
    max_row_tv: Optional[float] = None
    sin_theta_spectral: Optional[float] = None
    sin_theta_frobenius: Optional[float] = None
    extras: Dict[str, float] = field(default_factory=dict)

    def as_dict(self) -> Dict[str, float]:
        out = {
            k: getattr(self, k)
            for k in ("l1_total", "avg_row_tv", "max_row_tv", "sin_theta_spectral", "sin_theta_frobenius")
            if getattr(self, k) is not None
        }
        out.update(self.extras)
        return out


def matrix_losses(F_est, F, P_est, P) -> LossReport:
    avg, mx = row_tv(P_est, P)
    return LossReport(l1_total=l1_matrix_distance(F_est, F), avg_row_tv=avg, max_row_tv=mx)
