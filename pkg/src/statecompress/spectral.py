"""Spectral estimators built on truncated SVD.

Every estimator has a trajectory-level entry point and a ``*_matrix`` variant
that accepts the empirical (or exact) matrices directly.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence, Tuple

import numpy as np
from scipy.sparse.linalg import svds

from statecompress.errors import (
    DegenerateEstimateError,
    DimensionError,
    InsufficientDataError,
    ValidationError,
)
from statecompress.kmeans import KMeansConfig, PartitionLabels, kmeans
from statecompress.markov import (
    TrajectoryLike,
    as_trajectory,
    empirical_counts,
    transition_from_counts,
)

# above this size only the leading triplets are computed (ARPACK)
DENSE_SVD_MAX = 1500
GAP_TOL = 1e-12


@dataclass(frozen=True)
class SVDResult:
    U: np.ndarray
    sigma: np.ndarray
    V: np.ndarray
    sigma_next: Optional[float] = None

    @property
    def rank(self) -> int:
        return self.sigma.size

    @property
    def gap_degenerate(self) -> bool:
        """``sigma_r`` and ``sigma_{r+1}`` tie, so the leading subspace is not identified."""
        if self.sigma_next is None:
            return False
        scale = max(1.0, float(self.sigma[0]))
        return float(self.sigma[-1]) - self.sigma_next <= GAP_TOL * scale

    def reconstruct(self) -> np.ndarray:
        return (self.U * self.sigma) @ self.V.T


@dataclass(frozen=True)
class LowRankEstimate:
    F_hat: np.ndarray
    P_hat: np.ndarray
    F0: np.ndarray
    rank: int


@dataclass(frozen=True)
class SubspaceBasis:
    basis: np.ndarray
    side: str  # "left" | "right"
    source: str  # "frequency" | "transition"

    def __array__(self, dtype=None, copy=None):
        return np.asarray(self.basis, dtype=dtype)

    @property
    def r(self) -> int:
        return self.basis.shape[1]


@dataclass(frozen=True)
class LeadingSubspaces:
    U_F: SubspaceBasis
    V_F: SubspaceBasis
    U_P: SubspaceBasis
    V_P: SubspaceBasis

    def __iter__(self):
        return iter((self.U_F, self.V_F, self.U_P, self.V_P))

    def as_dict(self):
        return {"U_F": self.U_F, "V_F": self.V_F, "U_P": self.U_P, "V_P": self.V_P}


def _fix_signs(U, V):
    # largest-magnitude entry of each U column made nonnegative; argmax takes the lowest index on ties
    idx = np.argmax(np.abs(U), axis=0)
    signs = np.where(U[idx, np.arange(U.shape[1])] < 0, -1.0, 1.0)
    return U * signs, V * signs


def truncated_svd(M, r: int) -> SVDResult:
    """Top-``r`` singular triplets with a deterministic sign convention."""
    M = np.asarray(M, dtype=np.float64)
    if M.ndim != 2:
        raise DimensionError(f"expected a matrix, got shape {M.shape}")
    if not np.isfinite(M).all():
        raise ValidationError("matrix has non-finite entries")
    k = min(M.shape)
    r = int(r)
    if not 1 <= r <= k:
        raise ValidationError(f"rank {r} outside [1, {k}]")
    if k <= DENSE_SVD_MAX or r + 1 >= k:
        U, s, Vt = np.linalg.svd(M, full_matrices=False)
        sigma_next = float(s[r]) if r < k else None
        U, s, V = U[:, :r], s[:r], Vt[:r].T
    else:
        v0 = np.full(k, 1.0 / np.sqrt(k))
        U, s, Vt = svds(M, k=r + 1, v0=v0)
        order = np.argsort(s)[::-1]
        U, s, Vt = U[:, order], s[order], Vt[order]
        sigma_next = float(s[r])
        U, s, V = U[:, :r], s[:r], Vt[:r].T
    U, V = _fix_signs(np.ascontiguousarray(U), np.ascontiguousarray(V))
    return SVDResult(U, s.copy(), V, sigma_next)


def _normalize_rows_positive(M) -> np.ndarray:
    return transition_from_counts(np.clip(M, 0.0, None))


def estimate_low_rank_matrix(F_tilde, r: int) -> LowRankEstimate:
    """Rank-``r`` truncation, positive part, and normalization of a frequency matrix."""
    F_tilde = np.asarray(F_tilde, dtype=np.float64)
    if F_tilde.ndim != 2 or F_tilde.shape[0] != F_tilde.shape[1]:
        raise DimensionError(f"frequency matrix must be square, got {F_tilde.shape}")
    F0 = truncated_svd(F_tilde, r).reconstruct()
    positive = np.clip(F0, 0.0, None)
    mass = positive.sum()
    if not mass > 0:
        raise DegenerateEstimateError("positive part of the rank-r truncation is zero")
    F_hat = positive / mass
    return LowRankEstimate(F_hat, transition_from_counts(F_hat), F0, int(r))


def estimate_low_rank(traj: TrajectoryLike, r: int, p: Optional[int] = None) -> LowRankEstimate:
    """Spectral estimate of ``F`` and ``P`` from a trajectory of a rank-``r`` chain."""
    traj = as_trajectory(traj, p)
    F_tilde = empirical_counts(traj) / traj.n_transitions
    return estimate_low_rank_matrix(F_tilde, r)


def estimate_rectangular_matrix(G_tilde, r: int) -> Tuple[np.ndarray, np.ndarray]:
    """Rank-``r`` truncation of a p x q frequency matrix, then row-normalized positive part."""
    G0 = truncated_svd(G_tilde, r).reconstruct()
    return _normalize_rows_positive(G0), G0


def pair_frequency(pairs: Sequence[Tuple[int, int]], p: int, q: int) -> np.ndarray:
    arr = np.asarray(pairs, dtype=np.int64).reshape(-1, 2)
    if arr.shape[0] == 0:
        raise InsufficientDataError("no (x, y) pairs given")
    x, y = arr[:, 0], arr[:, 1]
    if x.min() < 0 or x.max() >= p or y.min() < 0 or y.max() >= q:
        raise ValidationError(f"pairs must lie in [0, {p}) x [0, {q})")
    counts = np.bincount(x * q + y, minlength=p * q).reshape(p, q)
    return counts / arr.shape[0]


def estimate_rectangular(pairs, r: int, p: int, q: int) -> Tuple[np.ndarray, np.ndarray]:
    """Estimate a rank-``r`` p x q conditional probability matrix from ``(x, y)`` pairs.

    Returns ``(Q_hat, G_hat0)``.  Rows whose truncated positive part is zero
    (including never-observed ``x``) are uniform over ``q``.
    """
    return estimate_rectangular_matrix(pair_frequency(pairs, p, q), r)


def leading_subspaces_matrix(F, P, r: int) -> LeadingSubspaces:
    sf = truncated_svd(F, r)
    sp = truncated_svd(P, r)
    return LeadingSubspaces(
        U_F=SubspaceBasis(sf.U, "left", "frequency"),
        V_F=SubspaceBasis(sf.V, "right", "frequency"),
        U_P=SubspaceBasis(sp.U, "left", "transition"),
        V_P=SubspaceBasis(sp.V, "right", "transition"),
    )


def leading_subspaces(traj: TrajectoryLike, r: int, p: Optional[int] = None) -> LeadingSubspaces:
    """Leading left/right singular subspaces of the empirical F and P."""
    traj = as_trajectory(traj, p)
    counts = empirical_counts(traj)
    return leading_subspaces_matrix(counts / traj.n_transitions, transition_from_counts(counts), r)


def spectral_state_aggregation_matrix(P, r: int, config: Optional[KMeansConfig] = None) -> PartitionLabels:
    """Cluster the rows of the leading left singular vectors of ``P``."""
    U = truncated_svd(P, r).U
    return kmeans(U, r, config)


def spectral_state_aggregation(
    traj: TrajectoryLike, r: int, config: Optional[KMeansConfig] = None, p: Optional[int] = None
) -> PartitionLabels:
    """Aggregation partition from the left features of the empirical transition matrix."""
    return spectral_state_aggregation_matrix(transition_from_counts(empirical_counts(traj, p)), r, config)


def spectral_lumpable_partition_matrix(F, r: int, config: Optional[KMeansConfig] = None) -> PartitionLabels:
    """Cluster the rows of the leading right singular vectors of ``F``."""
    V = truncated_svd(F, r).V
    return kmeans(V, r, config)


def spectral_lumpable_partition(
    traj: TrajectoryLike, r: int, config: Optional[KMeansConfig] = None, p: Optional[int] = None
) -> PartitionLabels:
    """Lumpable partition from the right features of the empirical frequency matrix."""
    traj = as_trajectory(traj, p)
    F_tilde = empirical_counts(traj) / traj.n_transitions
    return spectral_lumpable_partition_matrix(F_tilde, r, config)
