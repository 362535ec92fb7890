"""Weight grouping, learnable codebooks, assignment, and utilization stats."""
import math
from dataclasses import dataclass, field

import numpy as np

from vqqat import kernels
from vqqat.errors import ConfigError
from vqqat.numerics import kmeans

L2 = "l2"
COSINE = "cosine"
METRICS = (L2, COSINE)

NORM_FLOOR = 1e-8


@dataclass
class GroupedWeights:
    """A weight tensor flattened row-major and cut into length-``vec_len`` vectors."""

    flat: np.ndarray
    vec_len: int
    n_vectors: int
    pad_count: int
    orig_shape: tuple

    @property
    def vectors(self):
        return self.flat.reshape(self.n_vectors, self.vec_len)

    @property
    def n_weights(self):
        return self.flat.size - self.pad_count


def group(weights, vec_len):
    if vec_len < 1:
        raise ConfigError(f"vec_len must be >= 1, got {vec_len}")
    w = np.asarray(weights, dtype=np.float64)
    n = w.size
    n_vectors = -(-n // vec_len)
    pad = n_vectors * vec_len - n
    flat = np.zeros(n_vectors * vec_len)
    flat[:n] = w.reshape(-1)
    return GroupedWeights(flat, int(vec_len), n_vectors, pad, tuple(w.shape))


def regroup(gw, vectors=None):
    """Inverse of :func:`group`; ``vectors`` replaces the stored values if given."""
    flat = gw.flat if vectors is None else np.asarray(vectors, dtype=np.float64).reshape(-1)
    n = flat.size - gw.pad_count
    return flat[:n].reshape(gw.orig_shape).copy()


@dataclass
class Codebook:
    entries: np.ndarray
    b_index: int
    metric: str = COSINE

    def __post_init__(self):
        self.entries = np.ascontiguousarray(self.entries, dtype=np.float64)
        if self.entries.ndim != 2:
            raise ConfigError("codebook entries must be an N x L matrix")
        if self.metric not in METRICS:
            raise ConfigError(f"unknown metric {self.metric!r}")
        if self.entries.shape[0] != 2**self.b_index:
            raise ConfigError(
                f"codebook has {self.entries.shape[0]} entries, expected 2^{self.b_index}"
            )
        if not np.all(np.isfinite(self.entries)):
            raise ConfigError("codebook entries must be finite")

    @property
    def size(self):
        return self.entries.shape[0]

    @property
    def vec_len(self):
        return self.entries.shape[1]

    def keys(self):
        return self.entries / kernels.row_norms(self.entries)[:, None]

    def to_json(self):
        return {
            "b_index": self.b_index,
            "vec_len": self.vec_len,
            "metric": self.metric,
            "entries": self.entries.reshape(-1).tolist(),
        }

    @classmethod
    def from_json(cls, obj):
        entries = np.array(obj["entries"], dtype=np.float64).reshape(-1, obj["vec_len"])
        return cls(entries, int(obj["b_index"]), obj["metric"])


def apply_norm_floor(cb, floor=NORM_FLOOR):
    """Rescale codewords shorter than ``floor`` up to norm ``floor`` (in place)."""
    norms = kernels.row_norms(cb.entries)
    for i in np.flatnonzero(norms < floor):
        if norms[i] == 0.0:
            cb.entries[i] = 0.0
            cb.entries[i, 0] = floor
        else:
            cb.entries[i] *= floor / norms[i]
    return cb


def _check_dim(cb, X):
    if X.shape[-1] != cb.vec_len:
        raise ConfigError(f"vector length {X.shape[-1]} does not match codebook L={cb.vec_len}")


def assign_many(cb, X):
    """Codeword index for every row of ``X``; ties resolve to the lowest index."""
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    _check_dim(cb, X)
    if cb.metric == L2:
        idx, _ = kernels.sq_dist_argmin(X, cb.entries)
        return idx
    # zero rows score 0 everywhere and land on index 0
    return np.argmax(kernels.cosine_scores(X, cb.entries), axis=1).astype(np.intp)


def assign(cb, w):
    w = np.asarray(w, dtype=np.float64)
    if w.ndim != 1:
        raise ConfigError("assign takes a single vector; use assign_many for batches")
    return int(assign_many(cb, w[None, :])[0])


def init_codebook(gw, b_index, metric, rng, max_iters=100, tol=1e-6):
    """k-means codebook with 2^b_index entries fitted to the grouped vectors."""
    k = 2**b_index
    if k > gw.n_vectors:
        raise ConfigError(
            f"2^{b_index} = {k} codewords exceeds the {gw.n_vectors} weight vectors"
        )
    if metric not in METRICS:
        raise ConfigError(f"unknown metric {metric!r}")
    res = kmeans(gw.vectors, k, rng, max_iters=max_iters, tol=tol)
    entries = res.centroids
    if metric == COSINE:
        norms = kernels.row_norms(entries)
        for i in np.flatnonzero(norms < NORM_FLOOR):
            u = rng.standard_normal(gw.vec_len)
            entries[i] = u / np.linalg.norm(u)
    return Codebook(entries, b_index, metric)


@dataclass
class UtilizationStats:
    counts: np.ndarray
    entropy: float
    dead_count: int
    total: int = field(init=False)

    def __post_init__(self):
        self.total = int(self.counts.sum())


def stats_from_indices(idx, n_codewords):
    counts = np.bincount(np.asarray(idx, dtype=np.intp), minlength=n_codewords)
    total = counts.sum()
    entropy = 0.0
    for c in counts:
        if c > 0:
            q = c / total
            entropy -= q * math.log(q)
    return UtilizationStats(counts, max(entropy, 0.0), int((counts == 0).sum()))


def utilization(cb, gw):
    return stats_from_indices(assign_many(cb, gw.vectors), cb.size)
