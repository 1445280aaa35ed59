"""Pure-Python/numpy versions of the compiled kernels.

Arithmetic order matches ``_kernels.pyx`` exactly so results do not depend on
which backend was imported.
"""
from bisect import bisect_right

import numpy as np


def sample_path(cdf, start, uniforms):
    rows = [list(row) for row in np.asarray(cdf, dtype=np.float64)]
    n = len(uniforms)
    path = [0] * (n + 1)
    x = int(start)
    path[0] = x
    for t, u in enumerate(np.asarray(uniforms, dtype=np.float64).tolist()):
        x = bisect_right(rows[x], u)
        path[t + 1] = x
    return np.asarray(path, dtype=np.int64)


def count_pairs(states, p):
    states = np.asarray(states, dtype=np.int64)
    flat = states[:-1] * p + states[1:]
    return np.bincount(flat, minlength=p * p).reshape(p, p).astype(np.int64)


def nearest_center(X, centers):
    X = np.asarray(X, dtype=np.float64)
    centers = np.asarray(centers, dtype=np.float64)
    m, d = X.shape
    labels = np.zeros(m, dtype=np.int64)
    best = None
    for j in range(centers.shape[0]):
        acc = np.zeros(m)
        for k in range(d):
            diff = X[:, k] - centers[j, k]
            acc = acc + diff * diff
        if best is None:
            best = acc
            continue
        closer = acc < best
        labels[closer] = j
        best = np.where(closer, acc, best)
    return labels, best.copy()
