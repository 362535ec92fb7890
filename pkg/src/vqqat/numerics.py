"""Deterministic vector math shared by the quantizers."""
from typing import NamedTuple

import numpy as np

from vqqat import kernels
from vqqat.errors import ConfigError

# Substream purposes; every random draw in a run derives from
# (seed, purpose, *key) so results do not depend on call order.
STREAM_DATA = 0
STREAM_INIT = 1
STREAM_KMEANS = 2
STREAM_SHUFFLE = 3
STREAM_NAS = 4


def make_rng(seed, *key):
    """PCG64 generator for ``seed`` and an optional integer substream key."""
    entropy = [int(seed)] + [int(k) for k in key]
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(entropy)))


def l2_norm(v):
    v = np.asarray(v, dtype=np.float64)
    return float(np.sqrt(kernels.dot_lr(v, v)))


def dot(a, b):
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ConfigError(f"dot: dimension mismatch {a.shape} vs {b.shape}")
    return float(kernels.dot_lr(a, b))


def softmax(scores):
    """Softmax over the last axis with max-subtraction."""
    s = np.asarray(scores, dtype=np.float64)
    e = np.exp(s - s.max(axis=-1, keepdims=True))
    return e / e.sum(axis=-1, keepdims=True)


def argmax_tiebreak_low(v):
    v = np.asarray(v)
    if v.size == 0:
        raise ConfigError("argmax of an empty vector")
    # np.argmax returns the first maximal index
    return int(np.argmax(v))


class KMeansResult(NamedTuple):
    centroids: np.ndarray
    assignments: np.ndarray
    distortions: list


def kmeans_pp_init(points, k, rng):
    """k-means++ seeding: D^2-weighted sampling of k initial centroids."""
    X = np.ascontiguousarray(points, dtype=np.float64)
    n = X.shape[0]
    chosen = [int(rng.integers(n))]
    _, d2 = kernels.sq_dist_argmin(X, X[chosen])
    for _ in range(1, k):
        cum = np.cumsum(d2)
        total = float(cum[-1])
        if total > 0.0:
            # first index whose cumulative mass exceeds the draw; d2[i] > 0 there
            i = int(np.searchsorted(cum, rng.random() * total, side="right"))
        else:
            i = int(rng.integers(n))
        chosen.append(i)
        _, d_new = kernels.sq_dist_argmin(X, X[i : i + 1])
        d2 = np.minimum(d2, d_new)
    return X[chosen].copy()


def _refill_empty(labels, dist, counts, k):
    for j in range(k):
        if counts[j] > 0:
            continue
        movable = counts[labels] > 1
        if not movable.any():
            break
        cand = np.where(movable, dist, -1.0)
        p = int(np.argmax(cand))
        counts[labels[p]] -= 1
        labels[p] = j
        counts[j] = 1
        dist[p] = 0.0


def kmeans(points, k, rng, max_iters=100, tol=1e-6, init=None):
    """Lloyd's algorithm with k-means++ seeding.

    Empty clusters are refilled with the point farthest from its centroid.
    ``distortions`` holds the mean squared distance after seeding and after
    every iteration; it never increases.
    """
    X = np.ascontiguousarray(points, dtype=np.float64)
    if X.ndim != 2 or X.shape[0] == 0:
        raise ConfigError("kmeans needs a nonempty 2-d array of points")
    n = X.shape[0]
    k = int(k)
    if k < 1:
        raise ConfigError(f"kmeans: k must be >= 1, got {k}")
    if k > n:
        raise ConfigError(f"kmeans: k={k} exceeds the number of points ({n})")

    C = kmeans_pp_init(X, k, rng) if init is None else np.array(init, dtype=np.float64)
    labels, dist = kernels.sq_dist_argmin(X, C)
    distortions = [float(dist.mean())]
    for _ in range(max_iters):
        counts = np.bincount(labels, minlength=k)
        _refill_empty(labels, dist, counts, k)
        sums, counts = kernels.centroid_sums(X, labels, k)
        new_c = C.copy()
        nz = counts > 0
        new_c[nz] = sums[nz] / counts[nz, None]
        shift = float(np.sqrt(((new_c - C) ** 2).sum(axis=1)).max())
        C = new_c
        labels, dist = kernels.sq_dist_argmin(X, C)
        distortions.append(float(dist.mean()))
        if shift < tol:
            break
    return KMeansResult(C, labels, distortions)
