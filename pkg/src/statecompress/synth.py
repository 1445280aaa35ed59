"""Ground-truth chain generators and structural constructions.

All generators are deterministic functions of their ``seed`` and return
ergodic chains whose stationary distribution has been solved and checked.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any, Dict, List, Optional, Tuple

import numpy as np

from statecompress.errors import NumericalError, StructuralError, ValidationError
from statecompress.kmeans import PartitionLabels
from statecompress.markov import (
    StationaryDistribution,
    TrajectoryLike,
    as_trajectory,
    frequency_from_transition,
    stationary_distribution,
)

RANK_TOL = 1e-10
KERNEL_DET_TOL = 1e-12
MAX_REDRAWS = 10


@dataclass(frozen=True)
class LowRankFactorization:
    """``P = f @ g.T`` with probability-mass columns in ``g``.

    ``C = g.T @ f`` is the r x r Markov kernel, so ``P^n = f @ C^(n-1) @ g.T``.
    """

    f: np.ndarray
    g: np.ndarray
    C: np.ndarray = field(default=None)

    def __post_init__(self):
        f = np.asarray(self.f, dtype=np.float64)
        g = np.asarray(self.g, dtype=np.float64)
        if f.ndim != 2 or f.shape != g.shape:
            raise ValidationError(f"f and g must both be p x r, got {f.shape} and {g.shape}")
        if (g < 0).any() or not np.allclose(g.sum(axis=0), 1.0, rtol=0, atol=1e-12):
            raise ValidationError("columns of g must be probability vectors")
        C = g.T @ f
        if abs(np.linalg.det(C)) <= KERNEL_DET_TOL:
            raise NumericalError(f"Markov kernel is degenerate (|det C| = {abs(np.linalg.det(C)):.3g})")
        object.__setattr__(self, "f", f)
        object.__setattr__(self, "g", g)
        object.__setattr__(self, "C", C)

    @property
    def r(self) -> int:
        return self.f.shape[1]

    @property
    def p(self) -> int:
        return self.f.shape[0]

    def transition(self) -> np.ndarray:
        return self.f @ self.g.T


@dataclass(frozen=True)
class GroundTruthChain:
    P: np.ndarray
    F: np.ndarray
    pi: StationaryDistribution
    rank: int
    partition: Optional[PartitionLabels] = None
    factorization: Optional[LowRankFactorization] = None
    F1_F2: Optional[Tuple[np.ndarray, np.ndarray]] = None
    metadata: Dict[str, Any] = field(default_factory=dict)

    @property
    def p(self) -> int:
        return self.P.shape[0]


def _finish(P, rank, **kwargs) -> GroundTruthChain:
    pi = stationary_distribution(P)
    return GroundTruthChain(P=P, F=frequency_from_transition(P, pi.probs), pi=pi, rank=rank, **kwargs)


def numerical_rank(M, tol: float = RANK_TOL) -> int:
    s = np.linalg.svd(np.asarray(M, dtype=np.float64), compute_uv=False)
    return int((s > tol * s[0]).sum())


def _check_pr(p, r):
    if not 1 <= r <= p:
        raise ValidationError(f"need 1 <= r <= p, got p={p}, r={r}")


def gen_low_rank_chain(p: int, r: int, seed=None) -> GroundTruthChain:
    """Rank-``r`` chain with ``P`` proportional to ``|U0| |V0|^T`` row by row.

    ``U0`` and ``V0`` are p x r standard normal draws.  The factorization
    ``f``, ``g`` of the result is recorded.
    """
    _check_pr(p, r)
    rng = np.random.default_rng(seed)
    for _ in range(MAX_REDRAWS):
        A = np.abs(rng.standard_normal((p, r)))
        B = np.abs(rng.standard_normal((p, r)))
        colsum = B.sum(axis=0)
        g = B / colsum
        weighted = A * colsum
        f = weighted / weighted.sum(axis=1, keepdims=True)
        P = f @ g.T
        P /= P.sum(axis=1, keepdims=True)
        s = np.linalg.svd(P, compute_uv=False)
        if r < p and not s[r] < RANK_TOL * s[r - 1]:
            continue
        try:
            fact = LowRankFactorization(f, g)
        except NumericalError:
            continue
        return _finish(P, r, factorization=fact)
    raise NumericalError(f"no rank-{r} draw in {MAX_REDRAWS} attempts")


def gen_imbalanced_chain(p: int, r: int, delta: float, seed=None) -> GroundTruthChain:
    """Low-rank chain with transitions from ``I^c`` into ``I`` damped by ``1 / delta``.

    ``I`` is a random set of ``p // 2`` states.  The damping breaks the exact
    rank-``r`` structure (the result has rank at most ``2r``); the numerical
    rank is recorded in ``rank``.
    """
    if not delta >= 1:
        raise ValidationError(f"delta must be >= 1, got {delta}")
    base = gen_low_rank_chain(p, r, seed)
    if delta == 1:
        return base
    rng = np.random.default_rng([0 if seed is None else int(seed), 1])
    I = np.sort(rng.choice(p, size=p // 2, replace=False))
    Ic = np.setdiff1d(np.arange(p), I)
    P = base.P.copy()
    P[np.ix_(Ic, I)] /= delta
    P /= P.sum(axis=1, keepdims=True)
    return _finish(P, numerical_rank(P), metadata={"I": I, "delta": float(delta), "base_rank": r})


def _random_membership(p, r, rng) -> np.ndarray:
    while True:
        labels = rng.integers(r, size=p)
        if np.bincount(labels, minlength=r).min() > 0:
            return labels


def gen_aggregatable_chain(p: int, r: int, seed=None) -> GroundTruthChain:
    """Chain whose states in each block share one outgoing distribution (``P = Z G``)."""
    _check_pr(p, r)
    rng = np.random.default_rng(seed)
    labels = _random_membership(p, r, rng)
    G = rng.random((r, p))
    G /= G.sum(axis=1, keepdims=True)
    P = G[labels]
    partition = PartitionLabels(labels, r)
    try:
        fact = LowRankFactorization(partition.membership(), G.T)
    except NumericalError:
        fact = None
    return _finish(P, numerical_rank(P), partition=partition, factorization=fact)


def gen_lumpable_chain(p: int, r: int, seed=None) -> GroundTruthChain:
    """Lumpable chain ``P = P1 + P2`` with ``P2 Z = 0``.

    ``P1 = Z Pbar diag(1/|Omega|) Z^T`` with ``Pbar`` the row-normalized
    ``I + B``, ``B ~ U[0, 1/2]``.  ``P2`` is a centered uniform matrix with
    every row's block sums projected to zero, scaled by the largest factor
    that keeps ``P`` nonnegative.
    """
    if not 1 <= r <= p / 2:
        raise ValidationError(f"need 1 <= r <= p/2, got p={p}, r={r}")
    rng = np.random.default_rng(seed)
    labels = _random_membership(p, r, rng)
    partition = PartitionLabels(labels, r)
    Z = partition.membership()
    sizes = Z.sum(axis=0)
    B = rng.uniform(0.0, 0.5, size=(r, r))
    Pbar = np.eye(r) + B
    Pbar /= Pbar.sum(axis=1, keepdims=True)
    P1 = Z @ Pbar @ np.diag(1.0 / sizes) @ Z.T

    raw = rng.uniform(-0.5, 0.5, size=(p, p))
    for k in range(r):
        cols = labels == k
        raw[:, cols] -= raw[:, cols].mean(axis=1, keepdims=True)
    neg = raw < 0
    scale = float(np.min(P1[neg] / -raw[neg])) if neg.any() else 0.0
    P2 = scale * raw
    P = np.clip(P1 + P2, 0.0, None)
    P /= P.sum(axis=1, keepdims=True)
    P2 = P - P1

    chain = _finish(P, numerical_rank(P), partition=partition)
    D = chain.pi.probs[:, None]
    return GroundTruthChain(
        P=chain.P,
        F=chain.F,
        pi=chain.pi,
        rank=chain.rank,
        partition=partition,
        F1_F2=(D * P1, D * P2),
        metadata={"P1": P1, "P2": P2, "Pbar": Pbar, "P2_scale": scale},
    )


def gen_fano_transition_instances(p: int, r: int, eta: float, m: int, seed=None) -> List[np.ndarray]:
    """Near-uniform rank-``r`` transition matrices with Rademacher block perturbations.

    Each instance is ``(1/p) 11^T + (eta / 2p) M`` where ``M`` tiles a random
    ``p0 x (r-1)`` sign matrix ``R`` as ``[[R..R, -R..-R, 0], [-R..-R, R..R, 0], [0, 0, 0]]``
    with ``p0 = p // 2`` and ``l0 = p0 // (2(r-1))`` copies per side.
    """
    if r < 2:
        raise ValidationError("r must be at least 2")
    if not 0 < eta <= 0.5:
        raise ValidationError(f"eta must lie in (0, 1/2], got {eta}")
    p0 = p // 2
    l0 = p0 // (2 * (r - 1))
    if l0 < 1:
        raise ValidationError(f"p={p} is too small for r={r}: need p // 2 >= 2(r-1)")
    if m < 1:
        raise ValidationError("m must be at least 1")
    rng = np.random.default_rng(seed)
    width = l0 * (r - 1)
    out = []
    for _ in range(m):
        R = rng.choice(np.array([-1.0, 1.0]), size=(p0, r - 1))
        tile = np.tile(R, (1, l0))
        M = np.zeros((p, p))
        M[:p0, :width] = tile
        M[:p0, width : 2 * width] = -tile
        M[p0 : 2 * p0, :width] = -tile
        M[p0 : 2 * p0, width : 2 * width] = tile
        out.append(np.full((p, p), 1.0 / p) + eta / (2 * p) * M)
    return out


def gen_fano_subspace_instances(
    p: int, zeta: float, m: int, seed=None, delta: float = 1.0 / (4.0 * np.sqrt(2.0))
) -> List[np.ndarray]:
    """Rank-2 near-uniform transition matrices with a planted second singular pair.

    Each instance is ``(1/p) 11^T + (sqrt(2) delta / p) w s^T`` with
    ``w = [1; -1; zeta b; -zeta b]`` (blocks of length ``p/4``, ``b`` Rademacher)
    and ``s = [1_{p/2}; -1_{p/2}]``.  The second singular value is
    ``delta sqrt(1 + zeta^2)``; the default ``delta`` keeps every entry in
    ``[3/(4p), 5/(4p)]``.
    """
    if p % 4 != 0 or p <= 0:
        raise ValidationError(f"p must be a positive multiple of 4, got {p}")
    if not 0 < zeta <= 1:
        raise ValidationError(f"zeta must lie in (0, 1], got {zeta}")
    if not 0 < delta <= 1.0 / (4.0 * np.sqrt(2.0)):
        raise ValidationError("delta must lie in (0, 1/(4 sqrt 2)] to keep entries positive")
    rng = np.random.default_rng(seed)
    q = p // 4
    s = np.concatenate([np.ones(2 * q), -np.ones(2 * q)])
    out = []
    for _ in range(m):
        b = rng.choice(np.array([-1.0, 1.0]), size=q)
        w = np.concatenate([np.ones(q), -np.ones(q), zeta * b, -zeta * b])
        out.append(np.full((p, p), 1.0 / p) + (np.sqrt(2.0) * delta / p) * np.outer(w, s))
    return out


def kernel_power(fact: LowRankFactorization, n: int) -> np.ndarray:
    """``P^n`` through the r x r kernel: ``f C^(n-1) g^T``."""
    if n < 1:
        raise ValidationError("n must be at least 1")
    return fact.f @ np.linalg.matrix_power(fact.C, n - 1) @ fact.g.T


def latent_posterior(fact: LowRankFactorization, traj: TrajectoryLike) -> np.ndarray:
    """Per-transition distribution of the meta-state, ``f_k(x_t) g_k(x_{t+1})`` normalized."""
    if (fact.f < 0).any():
        raise ValidationError("latent augmentation needs a nonnegative factorization")
    traj = as_trajectory(traj, fact.p)
    X = traj.states
    if X.size < 2:
        raise ValidationError("trajectory has no transitions")
    W = fact.f[X[:-1]] * fact.g[X[1:]]
    den = W.sum(axis=1)
    bad = np.flatnonzero(den <= 0)
    if bad.size:
        t = int(bad[0])
        raise StructuralError(
            f"factorization gives zero probability to observed transition {X[t]} -> {X[t + 1]} at t={t}"
        )
    return W / den[:, None]


def augment_with_latent(fact: LowRankFactorization, traj: TrajectoryLike, seed=None) -> np.ndarray:
    """Sample a meta-state ``Z_t`` for every transition ``(X_t, X_{t+1})``."""
    post = latent_posterior(fact, traj)
    cdf = np.cumsum(post, axis=1)
    cdf /= cdf[:, -1:]
    u = np.random.default_rng(seed).random(post.shape[0])
    return (cdf <= u[:, None]).sum(axis=1).astype(np.int64)


def is_aggregatable(P, partition: PartitionLabels, tol: float = 1e-10) -> bool:
    """Rows within each block are identical."""
    P = np.asarray(P, dtype=np.float64)
    return all(np.abs(P[b] - P[b[0]]).max() <= tol for b in partition.blocks() if b.size)


def is_lumpable(P, partition: PartitionLabels, tol: float = 1e-10) -> bool:
    """Block sums ``sum_{j in Omega_l} P_ij`` depend only on the block of ``i``."""
    S = np.asarray(P, dtype=np.float64) @ partition.membership()
    return all(np.abs(S[b] - S[b[0]]).max() <= tol for b in partition.blocks() if b.size)


def lumped_transition(P, partition: PartitionLabels) -> np.ndarray:
    """Transition matrix of the walk on blocks (valid when ``P`` is lumpable)."""
    S = np.asarray(P, dtype=np.float64) @ partition.membership()
    return np.vstack([S[b].mean(axis=0) for b in partition.blocks()])
