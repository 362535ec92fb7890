"""Numpy fallback for the compiled kernels.

Loops run over the vector dimension with whole-array updates, which keeps
the floating-point operation order identical to ``_kernels.pyx``.
"""
import numpy as np

BACKEND = "python"


def dot_lr(a, b):
    acc = 0.0
    for x, y in zip(a.tolist(), b.tolist()):
        acc += x * y
    return acc


def row_norms(C):
    acc = np.zeros(C.shape[0])
    for j in range(C.shape[1]):
        acc += C[:, j] * C[:, j]
    return np.sqrt(acc)


def sq_dist_argmin(X, C):
    n, N = X.shape[0], C.shape[0]
    dist = np.zeros((n, N))
    for j in range(X.shape[1]):
        diff = X[:, j, None] - C[None, :, j]
        dist += diff * diff
    idx = np.argmin(dist, axis=1).astype(np.intp) if N else np.zeros(n, np.intp)
    return idx, dist[np.arange(n), idx]


def cosine_scores(X, C):
    K = C / row_norms(C)[:, None]
    S = np.zeros((X.shape[0], C.shape[0]))
    for j in range(X.shape[1]):
        S += X[:, j, None] * K[None, :, j]
    return S


def centroid_sums(X, labels, k):
    sums = np.zeros((k, X.shape[1]))
    np.add.at(sums, labels, X)
    counts = np.bincount(labels, minlength=k).astype(np.intp)
    return sums, counts


def scatter_add_rows(out, idx, vals):
    np.add.at(out, idx, vals)
