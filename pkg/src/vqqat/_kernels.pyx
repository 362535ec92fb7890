# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled inner loops for codeword search and k-means accumulation.

Every reduction runs left to right over the vector dimension (or over the
point index for accumulations) so results are bit-identical to the numpy
fallback in ``_kernels_py``.
"""
import numpy as np

cimport numpy as cnp
from libc.math cimport sqrt

cnp.import_array()

BACKEND = "cython"


def dot_lr(const double[::1] a, const double[::1] b):
    cdef Py_ssize_t j, d = a.shape[0]
    cdef double acc = 0.0
    for j in range(d):
        acc += a[j] * b[j]
    return acc


def row_norms(const double[:, ::1] C):
    cdef Py_ssize_t i, j, N = C.shape[0], L = C.shape[1]
    cdef double acc
    out = np.empty(N, dtype=np.float64)
    cdef double[::1] o = out
    for i in range(N):
        acc = 0.0
        for j in range(L):
            acc += C[i, j] * C[i, j]
        o[i] = sqrt(acc)
    return out


def sq_dist_argmin(const double[:, ::1] X, const double[:, ::1] C):
    """Nearest codeword under squared L2; ties go to the lowest index."""
    cdef Py_ssize_t n = X.shape[0], N = C.shape[0], L = X.shape[1]
    cdef Py_ssize_t v, i, j, best
    cdef double acc, diff, best_d
    idx = np.empty(n, dtype=np.intp)
    dist = np.empty(n, dtype=np.float64)
    cdef Py_ssize_t[::1] idx_v = idx
    cdef double[::1] dist_v = dist
    for v in range(n):
        best = 0
        best_d = 0.0
        for i in range(N):
            acc = 0.0
            for j in range(L):
                diff = X[v, j] - C[i, j]
                acc += diff * diff
            if i == 0 or acc < best_d:
                best_d = acc
                best = i
        idx_v[v] = best
        dist_v[v] = best_d
    return idx, dist


def cosine_scores(const double[:, ::1] X, const double[:, ::1] C):
    """s[v, i] = x_v . (c_i / ||c_i||)."""
    cdef Py_ssize_t n = X.shape[0], N = C.shape[0], L = X.shape[1]
    cdef Py_ssize_t v, i, j
    cdef double acc
    norms = row_norms(C)
    cdef double[::1] nv = norms
    keys = np.empty((N, L), dtype=np.float64)
    cdef double[:, ::1] K = keys
    for i in range(N):
        for j in range(L):
            K[i, j] = C[i, j] / nv[i]
    scores = np.empty((n, N), dtype=np.float64)
    cdef double[:, ::1] S = scores
    for v in range(n):
        for i in range(N):
            acc = 0.0
            for j in range(L):
                acc += X[v, j] * K[i, j]
            S[v, i] = acc
    return scores


def centroid_sums(const double[:, ::1] X, const Py_ssize_t[::1] labels, Py_ssize_t k):
    cdef Py_ssize_t n = X.shape[0], L = X.shape[1]
    cdef Py_ssize_t v, j, c
    sums = np.zeros((k, L), dtype=np.float64)
    counts = np.zeros(k, dtype=np.intp)
    cdef double[:, ::1] s = sums
    cdef Py_ssize_t[::1] cnt = counts
    for v in range(n):
        c = labels[v]
        cnt[c] += 1
        for j in range(L):
            s[c, j] += X[v, j]
    return sums, counts


def scatter_add_rows(double[:, ::1] out, const Py_ssize_t[::1] idx, const double[:, ::1] vals):
    """out[idx[v]] += vals[v], accumulated in increasing v."""
    cdef Py_ssize_t n = vals.shape[0], L = vals.shape[1]
    cdef Py_ssize_t v, j, r
    for v in range(n):
        r = idx[v]
        for j in range(L):
            out[r, j] += vals[v, j]
