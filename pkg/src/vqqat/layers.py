"""Whole-matrix weight quantizers and the quantized affine layer.

Each quantizer owns the latent weight plus its own learnable state, maps it
to quantized weights, and routes dL/dW_q back to its parameters. For
gradient checking every quantizer also exposes a straight-through
surrogate: it equals the quantized weights at the reference point and has
the derivative the backward rule claims.
"""
from fractions import Fraction

import numpy as np

from vqqat import kernels
from vqqat.codebook import COSINE, apply_norm_floor, group, init_codebook, regroup, stats_from_indices
from vqqat.errors import ConfigError
from vqqat.quantizers import (
    HardAttentionVQSpec,
    LinearQuantSpec,
    ProjectionVQSpec,
    havq_backward,
    havq_bits_per_weight,
    havq_forward,
    havq_soft,
    lq_backward,
    lq_forward,
    projvq_backward,
    projvq_bits_per_weight,
    projvq_forward,
)

# parameter groups; weight decay applies to "weight" and "bias" only
DECAYED_GROUPS = ("weight", "bias")


def _scalar(x):
    return np.array(float(x))


class FloatWeights:
    kind = "float"

    def __init__(self, weight):
        self.params = {"weight": np.array(weight, dtype=np.float64)}
        self.groups = {"weight": "weight"}
        self.grads = {}
        self._wq = None

    @property
    def weight(self):
        return self.params["weight"]

    @property
    def n_weights(self):
        return self.weight.size

    def quantize(self, training=True):
        self._wq = self.weight
        return self._wq

    def backward(self, d_wq):
        return {"weight": d_wq}

    def bits_per_weight(self):
        return Fraction(32)

    def storage_bits(self):
        return float(self.bits_per_weight() * self.n_weights)

    def set_reference(self):
        pass

    def surrogate(self):
        return self.weight

    def post_step(self):
        pass

    def utilization(self):
        return None

    def state(self):
        return {}

    def load_state(self, state):
        pass


class LinearWeights(FloatWeights):
    kind = "lq"

    def __init__(self, weight, bits, clip_lo=None, clip_hi=None):
        super().__init__(weight)
        w = self.weight
        lo = float(w.min()) if clip_lo is None else clip_lo
        hi = float(w.max()) if clip_hi is None else clip_hi
        if hi - lo < 1e-6:
            lo, hi = lo - 0.5e-6, hi + 0.5e-6
        self.bits = int(bits)
        self.params["clip_lo"] = _scalar(lo)
        self.params["clip_hi"] = _scalar(hi)
        self.groups.update(clip_lo="clip", clip_hi="clip")

    @property
    def spec(self):
        return LinearQuantSpec(self.bits, float(self.params["clip_lo"]), float(self.params["clip_hi"]))

    def quantize(self, training=True):
        self._res = lq_forward(self.weight, self.spec)
        self._wq = self._res.w_q
        return self._wq

    def backward(self, d_wq):
        gb = lq_backward(d_wq, self._res, self.spec)
        return {"weight": gb.d_weights, "clip_lo": _scalar(gb.d_clip_lo), "clip_hi": _scalar(gb.d_clip_hi)}

    def bits_per_weight(self):
        return Fraction(self.bits)

    def _sur(self):
        return np.clip(self.weight, float(self.params["clip_lo"]), float(self.params["clip_hi"]))

    def set_reference(self):
        self._offset = self._wq - self._sur()

    def surrogate(self):
        return self._sur() + self._offset

    def post_step(self):
        lo, hi = float(self.params["clip_lo"]), float(self.params["clip_hi"])
        if hi - lo < 1e-6:
            mid = 0.5 * (lo + hi)
            self.params["clip_lo"][...] = mid - 0.5e-6
            self.params["clip_hi"][...] = mid + 0.5e-6


class _VQWeights(FloatWeights):
    """Shared plumbing for codebook-based quantizers."""

    def __init__(self, weight, vec_len, b_index, rng=None, codebook=None, allow_padding=True):
        super().__init__(weight)
        self.vec_len = int(vec_len)
        self.b_index = int(b_index)
        gw = group(self.weight, self.vec_len)
        if gw.pad_count and not allow_padding:
            raise ConfigError(
                f"{self.weight.size} weights are not divisible by vec_len={self.vec_len} "
                "and padding is disabled"
            )
        if codebook is None:
            if rng is None:
                raise ConfigError("codebook initialization needs an rng")
            codebook = init_codebook(gw, self.b_index, COSINE, rng)
        self.codebook = codebook
        self.params["codebook"] = codebook.entries
        self.groups["codebook"] = "codebook"
        self._idx = None

    def _group(self, w):
        return group(w, self.vec_len)

    def post_step(self):
        apply_norm_floor(self.codebook)

    def utilization(self):
        res = havq_forward(self._group(self.weight).vectors, self.codebook, training=False)
        return stats_from_indices(res.aux["idx"], self.codebook.size)

    def assignments(self):
        return self._idx


class ProjVQWeights(_VQWeights):
    kind = "projvq"

    def __init__(self, weight, vec_len, b_index, b_scalar, rng=None, codebook=None,
                 allow_padding=True, s_lo=None, s_hi=None):
        super().__init__(weight, vec_len, b_index, rng, codebook, allow_padding)
        self.b_scalar = int(b_scalar)
        if s_lo is None or s_hi is None:
            res = projvq_forward(self._group(self.weight).vectors, self.codebook)
            s_lo, s_hi = float(res.aux["s_raw"].min()), float(res.aux["s_raw"].max())
            if s_hi - s_lo < 1e-6:
                s_lo, s_hi = s_lo - 0.5e-6, s_hi + 0.5e-6
        self.params["s_lo"] = _scalar(s_lo)
        self.params["s_hi"] = _scalar(s_hi)
        self.groups.update(s_lo="clip", s_hi="clip")

    @property
    def spec(self):
        return ProjectionVQSpec(self.b_index, self.b_scalar, self.vec_len)

    @property
    def scalar_q(self):
        return LinearQuantSpec(self.b_scalar, float(self.params["s_lo"]), float(self.params["s_hi"]))

    def quantize(self, training=True):
        self._gw = self._group(self.weight)
        self._res = projvq_forward(self._gw.vectors, self.codebook, self.spec, self.scalar_q)
        self._idx = self._res.aux["idx"]
        self._wq = regroup(self._gw, self._res.w_q)
        return self._wq

    def backward(self, d_wq):
        g = self._group(d_wq).vectors
        gb = projvq_backward(g, self._res, self.codebook, self.scalar_q)
        return {
            "weight": regroup(self._gw, gb.d_weights),
            "codebook": gb.d_codebook,
            "s_lo": _scalar(gb.d_clip_lo),
            "s_hi": _scalar(gb.d_clip_hi),
        }

    def bits_per_weight(self):
        return projvq_bits_per_weight(self.spec)

    def _sur(self):
        C = self.codebook.entries[self._ref_idx]
        s_clip = np.clip(self._ref_s_raw, float(self.params["s_lo"]), float(self.params["s_hi"]))
        vecs = self._ref_s[:, None] * C + self._ref_c * s_clip[:, None]
        return self.weight + regroup(self._gw, vecs)

    def set_reference(self):
        self._ref_idx = self._res.aux["idx"].copy()
        self._ref_s = self._res.aux["s"].copy()
        self._ref_s_raw = self._res.aux["s_raw"].copy()
        self._ref_c = self.codebook.entries[self._ref_idx].copy()
        self._offset = self._wq - self._sur()

    def surrogate(self):
        return self._sur() + self._offset

    def utilization(self):
        res = projvq_forward(self._group(self.weight).vectors, self.codebook)
        return stats_from_indices(res.aux["idx"], self.codebook.size)

    def post_step(self):
        super().post_step()
        lo, hi = float(self.params["s_lo"]), float(self.params["s_hi"])
        if hi - lo < 1e-6:
            mid = 0.5 * (lo + hi)
            self.params["s_lo"][...] = mid - 0.5e-6
            self.params["s_hi"][...] = mid + 0.5e-6


class HAVQWeights(_VQWeights):
    """Hard-attention VQ of a weight matrix.

    With ``freeze_assignments`` the codeword index of every vector is fixed
    at construction and only the selected codewords are trained (hard value
    path, no attention gradient).
    """

    kind = "havq"

    def __init__(self, weight, vec_len, b_index, rng=None, codebook=None,
                 allow_padding=True, freeze_assignments=False):
        super().__init__(weight, vec_len, b_index, rng, codebook, allow_padding)
        self.freeze_assignments = bool(freeze_assignments)
        self._frozen_idx = None
        if self.freeze_assignments:
            res = havq_forward(self._group(self.weight).vectors, self.codebook, training=False)
            self._frozen_idx = res.aux["idx"].copy()

    @property
    def spec(self):
        return HardAttentionVQSpec(self.b_index, self.vec_len)

    def quantize(self, training=True):
        self._gw = self._group(self.weight)
        if self.freeze_assignments:
            self._idx = self._frozen_idx
            self._wq = regroup(self._gw, self.codebook.entries[self._idx])
            return self._wq
        self._res = havq_forward(self._gw.vectors, self.codebook, training=training)
        self._idx = self._res.aux["idx"]
        self._wq = regroup(self._gw, self._res.w_q)
        return self._wq

    def backward(self, d_wq):
        g = self._group(d_wq).vectors
        if self.freeze_assignments:
            d_c = np.zeros_like(self.codebook.entries)
            kernels.scatter_add_rows(d_c, self._idx, g)
            return {"weight": np.zeros_like(self.weight), "codebook": d_c}
        gb = havq_backward(g, self._res, self._gw.vectors, self.codebook)
        return {"weight": regroup(self._gw, gb.d_weights), "codebook": gb.d_codebook}

    def bits_per_weight(self):
        return havq_bits_per_weight(self.spec)

    def _sur(self):
        if self.freeze_assignments:
            return regroup(self._gw, self.codebook.entries[self._idx])
        return regroup(self._gw, havq_soft(self._group(self.weight).vectors, self.codebook.entries))

    def set_reference(self):
        self._offset = self._wq - self._sur()

    def surrogate(self):
        return self._sur() + self._offset

    def state(self):
        if self._frozen_idx is None:
            return {}
        return {"frozen_idx": self._frozen_idx.tolist()}

    def load_state(self, state):
        if "frozen_idx" in state:
            self._frozen_idx = np.array(state["frozen_idx"], dtype=np.intp)


def make_weight_quantizer(qcfg, weight, rng):
    kind = qcfg.kind
    if kind == "float":
        return FloatWeights(weight)
    if kind == "lq":
        return LinearWeights(weight, qcfg.lq_bits)
    if kind == "projvq":
        return ProjVQWeights(weight, qcfg.vec_len, qcfg.b_index, qcfg.b_scalar, rng=rng,
                             allow_padding=qcfg.allow_padding)
    if kind == "havq":
        return HAVQWeights(weight, qcfg.vec_len, qcfg.b_index, rng=rng,
                           allow_padding=qcfg.allow_padding,
                           freeze_assignments=qcfg.freeze_assignments)
    raise ConfigError(f"unknown quantizer kind {kind!r}")


class QuantLinear:
    """y = x W_q^T + b with W_q produced by the layer's weight quantizer."""

    def __init__(self, name, quant, bias):
        self.name = name
        self.quant = quant
        self.bias = np.array(bias, dtype=np.float64)
        self.grads = {}

    @property
    def kind(self):
        return self.quant.kind

    @property
    def n_weights(self):
        return self.quant.n_weights

    def param_items(self):
        items = [(k, v, self.quant.groups[k]) for k, v in self.quant.params.items()]
        items.append(("bias", self.bias, "bias"))
        return items

    def forward(self, x, training=True, step=0, surrogate=False):
        self._x = x
        self._wq = self.quant.surrogate() if surrogate else self.quant.quantize(training)
        return x @ self._wq.T + self.bias

    def set_reference(self):
        self.quant.set_reference()

    def backward(self, dy):
        self.grads = self.quant.backward(dy.T @ self._x)
        self.grads["bias"] = dy.sum(axis=0)
        return dy @ self._wq

    def storage_bits(self):
        return self.quant.storage_bits()

    def bits_per_weight(self):
        return float(self.quant.bits_per_weight())

    def post_step(self):
        self.quant.post_step()

    def utilization(self):
        return self.quant.utilization()

    def codebook(self):
        return getattr(self.quant, "codebook", None)

    def arch_grads(self, beta):
        return {}
