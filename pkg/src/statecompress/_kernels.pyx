# cython: boundscheck=False, wraparound=False, cdivision=True
"""Compiled inner loops.

Every routine here has a twin in :mod:`statecompress._purepy` that performs
the same floating-point operations in the same order, so both backends return
identical arrays.
"""
import numpy as np
cimport numpy as cnp

cnp.import_array()


def sample_path(const double[:, ::1] cdf, Py_ssize_t start, const double[::1] uniforms):
    """Walk a chain by inverse-CDF lookup.

    ``cdf`` holds row-wise cumulative sums with the last column exactly 1.
    Step ``t`` moves to the first column whose cumulative value exceeds
    ``uniforms[t]``.
    """
    cdef Py_ssize_t n = uniforms.shape[0]
    cdef Py_ssize_t q = cdf.shape[1]
    cdef Py_ssize_t t, lo, hi, mid
    cdef Py_ssize_t x = start
    cdef double u
    out = np.empty(n + 1, dtype=np.int64)
    cdef cnp.int64_t[::1] path = out
    path[0] = x
    for t in range(n):
        u = uniforms[t]
        lo = 0
        hi = q
        while lo < hi:
            mid = (lo + hi) >> 1
            if cdf[x, mid] > u:
                hi = mid
            else:
                lo = mid + 1
        x = lo
        path[t + 1] = x
    return out


def count_pairs(const cnp.int64_t[::1] states, Py_ssize_t p):
    """Count consecutive pairs ``(states[k-1], states[k])`` into a p x p table."""
    counts = np.zeros((p, p), dtype=np.int64)
    cdef cnp.int64_t[:, ::1] c = counts
    cdef Py_ssize_t k
    for k in range(1, states.shape[0]):
        c[states[k - 1], states[k]] += 1
    return counts


def nearest_center(const double[:, ::1] X, const double[:, ::1] centers):
    """Label each row with its closest center (lowest index on ties)."""
    cdef Py_ssize_t m = X.shape[0]
    cdef Py_ssize_t d = X.shape[1]
    cdef Py_ssize_t r = centers.shape[0]
    cdef Py_ssize_t i, j, k, best
    cdef double acc, diff, best_d
    labels = np.empty(m, dtype=np.int64)
    dists = np.empty(m, dtype=np.float64)
    cdef cnp.int64_t[::1] lab = labels
    cdef double[::1] dist = dists
    for i in range(m):
        best = 0
        best_d = 0.0
        for j in range(r):
            acc = 0.0
            for k in range(d):
                diff = X[i, k] - centers[j, k]
                acc = acc + diff * diff
            if j == 0 or acc < best_d:
                best_d = acc
                best = j
        lab[i] = best
        dist[i] = best_d
    return labels, dists
