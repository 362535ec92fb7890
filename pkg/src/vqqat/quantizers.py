"""Forward and straight-through backward rules for the three weight quantizers.

* uniform linear quantization with learnable clip bounds (LQ)
* cosine-assigned VQ with a per-vector projection scalar (ProjVQ)
* hard-attention VQ: normalized codewords are keys, the weight vector is
  the query, the top-1 codeword is emitted (HAVQ)

Vector ops accept a single vector of shape (L,) or a batch of shape (n, L).
"""
from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np

from vqqat import kernels
from vqqat.codebook import COSINE, assign_many
from vqqat.errors import ConfigError
from vqqat.numerics import softmax


@dataclass
class LinearQuantSpec:
    bits: int
    clip_lo: float
    clip_hi: float

    def __post_init__(self):
        if self.bits < 1:
            raise ConfigError(f"LQ bits must be >= 1, got {self.bits}")

    @property
    def levels(self):
        return 2**self.bits - 1

    @property
    def scale(self):
        return (self.clip_hi - self.clip_lo) / self.levels

    @property
    def zero_point(self):
        return float(round_half_away(-self.clip_lo / self.scale))


@dataclass
class ProjectionVQSpec:
    b_index: int
    b_scalar: int
    vec_len: int

    def __post_init__(self):
        if self.b_index < 1 or self.b_scalar < 1 or self.vec_len < 1:
            raise ConfigError("ProjVQ needs b_index, b_scalar, vec_len >= 1")


@dataclass
class HardAttentionVQSpec:
    b_index: int
    vec_len: int

    def __post_init__(self):
        if self.b_index < 1 or self.vec_len < 1:
            raise ConfigError("HAVQ needs b_index, vec_len >= 1")


@dataclass
class QuantizeResult:
    w_q: np.ndarray
    aux: dict = field(default_factory=dict)


@dataclass
class GradBundle:
    d_weights: np.ndarray = None
    d_codebook: np.ndarray = None
    d_clip_lo: float = None
    d_clip_hi: float = None
    d_p: np.ndarray = None


def round_half_away(x):
    x = np.asarray(x, dtype=np.float64)
    t = np.trunc(x)
    frac = x - t
    return t + np.sign(x) * (np.abs(frac) >= 0.5)


def _rowdot(a, b):
    return np.einsum("ij,ij->i", a, b)


# -- uniform linear quantization -------------------------------------------


def lq_forward(x, spec):
    if not spec.clip_hi - spec.clip_lo >= 1e-12:
        raise ConfigError(
            f"degenerate LQ range [{spec.clip_lo}, {spec.clip_hi}]"
        )
    scalar = np.ndim(x) == 0
    xa = np.asarray(x, dtype=np.float64)
    s = spec.scale
    z = spec.zero_point
    q = np.clip(round_half_away(xa / s) + z, 0, spec.levels)
    w_q = (q - z) * s
    if scalar:
        return QuantizeResult(float(w_q), {"x": float(xa), "q": int(q), "scale": s, "zero_point": z})
    return QuantizeResult(w_q, {"x": xa, "q": q.astype(np.int64), "scale": s, "zero_point": z})


def lq_backward(g, result, spec):
    """Clipped STE; clip bounds collect the gradient of saturated inputs."""
    x = np.asarray(result.aux["x"])
    g = np.asarray(g, dtype=np.float64)
    below = x < spec.clip_lo
    above = x > spec.clip_hi
    d_x = np.where(below | above, 0.0, g)
    d_lo = float(np.where(below, g, 0.0).sum())
    d_hi = float(np.where(above, g, 0.0).sum())
    if d_x.ndim == 0:
        d_x = float(d_x)
    return GradBundle(d_weights=d_x, d_clip_lo=d_lo, d_clip_hi=d_hi)


def lq_bits_per_weight(bits):
    return Fraction(bits)


# -- projection-scaled cosine VQ -------------------------------------------


def projvq_forward(w, cb, spec=None, scalar_q=None):
    """Assign by cosine, then scale the codeword by the projection of w onto it.

    ``scalar_q`` quantizes the projection scalar with ``spec.b_scalar`` bits;
    when None the raw scalar is used.
    """
    if cb.metric != COSINE:
        raise ConfigError("projection VQ requires a cosine-metric codebook")
    single = np.ndim(w) == 1
    W = np.atleast_2d(np.asarray(w, dtype=np.float64))
    if spec is not None and spec.vec_len != cb.vec_len:
        raise ConfigError("ProjVQ spec vec_len does not match the codebook")
    if scalar_q is not None and spec is not None and scalar_q.bits != spec.b_scalar:
        raise ConfigError("scalar quantizer bit width differs from spec.b_scalar")
    idx = assign_many(cb, W)
    C = cb.entries[idx]
    s_raw = _rowdot(W, C) / _rowdot(C, C)
    sres = None
    if scalar_q is not None:
        sres = lq_forward(s_raw, scalar_q)
        s = sres.w_q
    else:
        s = s_raw
    w_q = s[:, None] * C
    aux = {"idx": idx, "s_raw": s_raw, "s": s, "scalar": sres}
    if single:
        return QuantizeResult(w_q[0], aux)
    return QuantizeResult(w_q, aux)


def projvq_backward(g, result, cb, scalar_q=None):
    """Identity STE to w; codeword i collects s * g; s itself is a constant.

    With a scalar quantizer, its clip bounds receive the saturated part of
    dL/ds = g . c_i (no path back to w or c).
    """
    G = np.atleast_2d(np.asarray(g, dtype=np.float64))
    idx = result.aux["idx"]
    s = result.aux["s"]
    d_c = np.zeros_like(cb.entries)
    kernels.scatter_add_rows(d_c, idx, s[:, None] * G)
    d_w = G.copy() if np.ndim(g) == 2 else G[0].copy()
    out = GradBundle(d_weights=d_w, d_codebook=d_c)
    if scalar_q is not None:
        d_s = _rowdot(G, cb.entries[idx])
        sb = lq_backward(d_s, result.aux["scalar"], scalar_q)
        out.d_clip_lo, out.d_clip_hi = sb.d_clip_lo, sb.d_clip_hi
    return out


def projvq_bits_per_weight(spec):
    return Fraction(spec.b_index + spec.b_scalar, spec.vec_len)


def projvq_compression_ratio(spec):
    return Fraction(32 * spec.vec_len, spec.b_index + spec.b_scalar)


# -- hard-attention VQ ------------------------------------------------------


def havq_forward(w, cb, training=True):
    """Top-1 codeword under softmax(w . c_i/||c_i||).

    ``training`` is accepted for interface symmetry; the computation is the
    same in both modes.
    """
    single = np.ndim(w) == 1
    W = np.atleast_2d(np.asarray(w, dtype=np.float64))
    if W.shape[1] != cb.vec_len:
        raise ConfigError(f"vector length {W.shape[1]} does not match codebook L={cb.vec_len}")
    norms = kernels.row_norms(cb.entries)
    if np.any(norms == 0.0):
        raise RuntimeError("zero-norm codeword reached hard-attention VQ")
    scores = kernels.cosine_scores(W, cb.entries)
    p = softmax(scores)
    idx = np.argmax(p, axis=1).astype(np.intp)
    w_q = cb.entries[idx].copy()
    aux = {"p": p, "idx": idx, "scores": scores, "norms": norms, "training": bool(training)}
    if single:
        return QuantizeResult(w_q[0], aux)
    return QuantizeResult(w_q, aux)


def havq_backward(g, result, w, cb):
    """Exact gradient of the soft surrogate sum_i p_i c_i, evaluated at g.

    d_p_i = g . c_i; softmax Jacobian to the scores; scores split into the
    query path (to w) and the key path (to c through c/||c||). The value
    path adds p_i * g to each codeword.
    """
    single = np.ndim(g) == 1
    G = np.atleast_2d(np.asarray(g, dtype=np.float64))
    W = np.atleast_2d(np.asarray(w, dtype=np.float64))
    p = result.aux["p"]
    norms = result.aux["norms"]
    C = cb.entries
    K = C / norms[:, None]

    d_p = G @ C.T
    d_s = p * (d_p - (p * d_p).sum(axis=1, keepdims=True))
    d_w = d_s @ K
    A = d_s.T @ W
    key = (A - K * _rowdot(K, A)[:, None]) / norms[:, None]
    d_c = p.T @ G + key
    if single:
        return GradBundle(d_weights=d_w[0], d_codebook=d_c, d_p=d_p[0])
    return GradBundle(d_weights=d_w, d_codebook=d_c, d_p=d_p)


def havq_soft(w, cb_entries):
    """Soft surrogate sum_i softmax(w . k)_i c_i, used by gradient oracles."""
    W = np.atleast_2d(np.asarray(w, dtype=np.float64))
    C = np.asarray(cb_entries, dtype=np.float64)
    K = C / np.sqrt((C * C).sum(axis=1))[:, None]
    return softmax(W @ K.T) @ C


def havq_bits_per_weight(spec):
    return Fraction(spec.b_index, spec.vec_len)


def havq_compression_ratio(spec):
    return Fraction(32 * spec.vec_len, spec.b_index)
