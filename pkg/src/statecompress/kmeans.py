"""Lloyd's k-means with k-means++ seeding and restarts."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from statecompress import _backend
from statecompress.errors import ValidationError


@dataclass(frozen=True)
class KMeansConfig:
    restarts: int = 20
    max_iters: int = 100
    tol: float = 1e-8
    seed: int = 0

    def __post_init__(self):
        if self.restarts < 1:
            raise ValidationError("restarts must be at least 1")
        if self.max_iters < 1:
            raise ValidationError("max_iters must be at least 1")


@dataclass(frozen=True)
class PartitionLabels:
    """Block assignment of ``p`` states into ``r`` blocks."""

    labels: np.ndarray
    r: int
    inertia: Optional[float] = None

    def __post_init__(self):
        labels = np.ascontiguousarray(self.labels, dtype=np.int64).ravel()
        r = int(self.r)
        if r < 1:
            raise ValidationError("a partition needs at least one block")
        if labels.size and (labels.min() < 0 or labels.max() >= r):
            raise ValidationError(f"block labels must lie in [0, {r})")
        labels.setflags(write=False)
        object.__setattr__(self, "labels", labels)
        object.__setattr__(self, "r", r)

    def __len__(self):
        return self.labels.size

    @property
    def p(self) -> int:
        return self.labels.size

    def blocks(self):
        return [np.flatnonzero(self.labels == k) for k in range(self.r)]

    def membership(self) -> np.ndarray:
        """Indicator matrix ``Z`` with ``Z[i, k] = 1`` iff state ``i`` is in block ``k``."""
        Z = np.zeros((self.p, self.r))
        Z[np.arange(self.p), self.labels] = 1.0
        return Z


def canonical_labels(labels) -> np.ndarray:
    """Relabel blocks in order of first appearance."""
    labels = np.asarray(labels, dtype=np.int64)
    _, first = np.unique(labels, return_index=True)
    order = np.argsort(first)
    remap = np.empty(labels.max() + 1 if labels.size else 0, dtype=np.int64)
    remap[np.unique(labels)[order]] = np.arange(order.size)
    return remap[labels]


def _plusplus(X, r, rng):
    m = X.shape[0]
    chosen = [int(rng.integers(m))]
    d2 = ((X - X[chosen[0]]) ** 2).sum(axis=1)
    for _ in range(1, r):
        total = d2.sum()
        if total > 0:
            idx = int(np.searchsorted(np.cumsum(d2) / total, rng.random(), side="right"))
            idx = min(idx, m - 1)
        else:
            remaining = np.setdiff1d(np.arange(m), chosen)
            idx = int(remaining[rng.integers(remaining.size)])
        chosen.append(idx)
        d2 = np.minimum(d2, ((X - X[idx]) ** 2).sum(axis=1))
    return X[chosen].copy()


def _means(X, labels, r, centers):
    out = centers.copy()
    for k in range(r):
        members = labels == k
        if members.any():
            out[k] = X[members].mean(axis=0)
    return out


def _repair_empty(X, labels, r, centers):
    # move the farthest point of the largest cluster into each empty cluster
    labels = labels.copy()
    centers = centers.copy()
    for k in range(r):
        sizes = np.bincount(labels, minlength=r)
        if sizes[k] > 0:
            continue
        big = int(np.argmax(sizes))
        members = np.flatnonzero(labels == big)
        d2 = ((X[members] - centers[big]) ** 2).sum(axis=1)
        far = int(members[np.argmax(d2)])
        labels[far] = k
        centers[k] = X[far]
    return labels, centers


def _inertia(X, labels, centers) -> float:
    return float(((X - centers[labels]) ** 2).sum())


def lloyd(X, centers, max_iters: int = 100, tol: float = 1e-8):
    """Run Lloyd iterations from ``centers``.

    Returns ``(labels, centers, history)`` where ``history`` lists the inertia
    after each update; it is nonincreasing.
    """
    X = np.ascontiguousarray(X, dtype=np.float64)
    centers = np.ascontiguousarray(centers, dtype=np.float64)
    r = centers.shape[0]
    labels, _ = _backend.nearest_center(X, centers)
    labels, centers = _repair_empty(X, labels, r, centers)
    centers = _means(X, labels, r, centers)
    history = [_inertia(X, labels, centers)]
    for _ in range(max_iters - 1):
        new_labels, _ = _backend.nearest_center(X, np.ascontiguousarray(centers))
        new_labels, centers = _repair_empty(X, new_labels, r, centers)
        centers = _means(X, new_labels, r, centers)
        history.append(_inertia(X, new_labels, centers))
        converged = np.array_equal(new_labels, labels) or history[-2] - history[-1] <= tol * max(history[-2], 1e-300)
        labels = new_labels
        if converged:
            break
    return labels, centers, history


def kmeans(rows, r: int, config: Optional[KMeansConfig] = None) -> PartitionLabels:
    """Partition the rows of ``rows`` into ``r`` clusters.

    The best of ``config.restarts`` seeded runs (by inertia) is kept.  Restart
    ``j`` draws from ``default_rng([seed, j])``, so results are reproducible and
    independent of execution order.
    """
    config = config or KMeansConfig()
    X = np.ascontiguousarray(np.atleast_2d(np.asarray(rows, dtype=np.float64)))
    m = X.shape[0]
    r = int(r)
    if r < 1:
        raise ValidationError("r must be at least 1")
    if r > m:
        raise ValidationError(f"cannot form {r} clusters from {m} rows")
    if not np.isfinite(X).all():
        raise ValidationError("rows contain non-finite values")
    best_labels, best_inertia = None, np.inf
    for j in range(config.restarts):
        rng = np.random.default_rng([config.seed, j])
        centers = _plusplus(X, r, rng)
        labels, _, history = lloyd(X, centers, config.max_iters, config.tol)
        if history[-1] < best_inertia:
            best_inertia = history[-1]
            best_labels = labels
    return PartitionLabels(canonical_labels(best_labels), r, inertia=float(best_inertia))
