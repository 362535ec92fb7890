"""Finite-difference verification of every backward rule.

Each suite compares an analytic backward against central differences of
the rule's declared surrogate forward over seeded random instances.
"""
from dataclasses import dataclass

import numpy as np

from vqqat.codebook import COSINE, Codebook
from vqqat.layers import HAVQWeights, LinearWeights, ProjVQWeights, QuantLinear, FloatWeights
from vqqat.model import MLP, softmax_cross_entropy
from vqqat.nas import ArchParams, MixedLayer, arch_backward
from vqqat.numerics import make_rng, softmax
from vqqat.quantizers import (
    LinearQuantSpec,
    ProjectionVQSpec,
    havq_backward,
    havq_forward,
    lq_backward,
    lq_forward,
    projvq_backward,
    projvq_forward,
)

RTOL = 1e-5
ATOL = 1e-7
E2E_RTOL = 1e-4
STEP = 1e-6
CORRUPTION = 1.01

OPS = ("lq_backward", "projvq_backward", "havq_backward", "arch_backward", "end_to_end")


@dataclass
class CheckResult:
    op: str
    max_rel_err: float
    n_instances: int
    tol: float

    @property
    def passed(self):
        return self.max_rel_err <= self.tol


def fd_grad(f, arr, h=STEP):
    """Central differences of scalar ``f()`` with respect to every element of ``arr`` (perturbed in place)."""
    grad = np.zeros(arr.shape)
    flat = arr.reshape(-1)
    gflat = grad.reshape(-1)
    for i in range(flat.size):
        old = flat[i]
        flat[i] = old + h
        fp = f()
        flat[i] = old - h
        fm = f()
        flat[i] = old
        gflat[i] = (fp - fm) / (2 * h)
    return grad


def rel_err(analytic, numeric, rtol=RTOL, atol=ATOL):
    """Largest elementwise |a - n| / max(|a|, |n|); differences below ``atol`` count as exact."""
    a = np.asarray(analytic, dtype=np.float64).reshape(-1)
    n = np.asarray(numeric, dtype=np.float64).reshape(-1)
    if a.size == 0:
        return 0.0
    denom = np.maximum(np.maximum(np.abs(a), np.abs(n)), atol / rtol)
    return float((np.abs(a - n) / denom).max())


def _scale(corrupt, op):
    return CORRUPTION if op in corrupt else 1.0


def check_lq(n_instances=100, seed=0, corrupt=()):
    worst = 0.0
    k = _scale(corrupt, "lq_backward")
    for t in range(n_instances):
        rng = make_rng(seed, 101, t)
        bits = int(rng.integers(1, 9))
        m = float(rng.uniform(-2.0, -0.2))
        M = float(rng.uniform(0.2, 2.0))
        while True:
            x = rng.uniform(-3.0, 3.0, 8)
            if min(np.abs(x - m).min(), np.abs(x - M).min()) > 1e-3:
                break
        g = rng.standard_normal(8)
        spec = LinearQuantSpec(bits, m, M)
        gb = lq_backward(g, lq_forward(x, spec), spec)
        p = {"x": x.copy(), "lo": np.array(m), "hi": np.array(M)}

        def f():
            return float(g @ np.clip(p["x"], float(p["lo"]), float(p["hi"])))

        worst = max(worst,
                    rel_err(k * gb.d_weights, fd_grad(f, p["x"])),
                    rel_err(k * gb.d_clip_lo, fd_grad(f, p["lo"])),
                    rel_err(k * gb.d_clip_hi, fd_grad(f, p["hi"])))
    return CheckResult("lq_backward", worst, n_instances, RTOL)


def check_projvq(n_instances=100, seed=0, corrupt=()):
    worst = 0.0
    k = _scale(corrupt, "projvq_backward")
    n, L, b_index, b_scalar = 6, 3, 2, 3
    for t in range(n_instances):
        rng = make_rng(seed, 102, t)
        W = rng.standard_normal((n, L))
        cb = Codebook(rng.standard_normal((2**b_index, L)), b_index, COSINE)
        s_raw = projvq_forward(W, cb).aux["s_raw"]
        # clip range inside the scalar spread so both saturation sides occur
        lo, hi = np.quantile(s_raw, [0.2, 0.8])
        if min(np.abs(s_raw - lo).min(), np.abs(s_raw - hi).min()) < 1e-3:
            lo, hi = lo - 2e-3, hi + 2e-3
        sq = LinearQuantSpec(b_scalar, float(lo), float(hi))
        spec = ProjectionVQSpec(b_index, b_scalar, L)
        res = projvq_forward(W, cb, spec, sq)
        g = rng.standard_normal((n, L))
        gb = projvq_backward(g, res, cb, sq)

        idx, s0 = res.aux["idx"], res.aux["s"]
        C0 = cb.entries[idx].copy()
        p = {"W": W.copy(), "C": cb.entries.copy(), "lo": np.array(float(lo)), "hi": np.array(float(hi))}

        def f():
            s_clip = np.clip(s_raw, float(p["lo"]), float(p["hi"]))
            w_hat = p["W"] + s0[:, None] * p["C"][idx] + C0 * s_clip[:, None]
            return float((g * w_hat).sum())

        worst = max(worst,
                    rel_err(k * gb.d_weights, fd_grad(f, p["W"])),
                    rel_err(k * gb.d_codebook, fd_grad(f, p["C"])),
                    rel_err(k * gb.d_clip_lo, fd_grad(f, p["lo"])),
                    rel_err(k * gb.d_clip_hi, fd_grad(f, p["hi"])))
    return CheckResult("projvq_backward", worst, n_instances, RTOL)


def _soft(W, C):
    K = C / np.sqrt((C * C).sum(axis=1))[:, None]
    return softmax(W @ K.T) @ C


def check_havq(n_instances=100, seed=0, corrupt=()):
    worst = 0.0
    k = _scale(corrupt, "havq_backward")
    n, N, L = 3, 8, 4
    for t in range(n_instances):
        rng = make_rng(seed, 103, t)
        W = rng.standard_normal((n, L))
        cb = Codebook(rng.standard_normal((N, L)), 3, COSINE)
        g = rng.standard_normal((n, L))
        gb = havq_backward(g, havq_forward(W, cb), W, cb)
        p = {"W": W.copy(), "C": cb.entries.copy()}

        def f():
            return float((g * _soft(p["W"], p["C"])).sum())

        worst = max(worst,
                    rel_err(k * gb.d_weights, fd_grad(f, p["W"])),
                    rel_err(k * gb.d_codebook, fd_grad(f, p["C"])))
    return CheckResult("havq_backward", worst, n_instances, RTOL)


def check_arch(n_instances=100, seed=0, corrupt=()):
    worst = 0.0
    k = _scale(corrupt, "arch_backward")
    for t in range(n_instances):
        rng = make_rng(seed, 104, t)
        layer = MixedLayer("m", rng.standard_normal((2, 2)), rng.standard_normal(2),
                           vec_len=2, b_index=1, lq_bits=2, rng=rng,
                           arch=ArchParams(rng.normal(0.0, 1.0, 2)))
        x = rng.standard_normal((3, 2))
        layer.forward(x, training=True, rng=rng)
        y_vq, y_lq = layer.branch_outputs(x)
        g = rng.standard_normal(y_vq.shape)
        d = arch_backward(g, y_vq, y_lq, layer.arch)
        logits = layer.arch.logits

        def f():
            p = ArchParams(logits).p_vq
            return float((g * (p * y_vq + (1 - p) * y_lq)).sum())

        worst = max(worst, rel_err(k * d, fd_grad(f, logits)))
    return CheckResult("arch_backward", worst, n_instances, RTOL)


E2E_KINDS = ("float", "lq", "projvq", "havq", "mixed")


def _interior_clip(lo, hi):
    """Shrink a [min, max] init range so no reference value sits on a clip kink."""
    width = float(hi - lo)
    lo[...] = lo + 0.15 * width
    hi[...] = hi - 0.15 * width


def _e2e_model(kind, rng):
    def w(o, i):
        return rng.standard_normal((o, i)) * 0.8

    def quant(weight):
        if kind == "float":
            return FloatWeights(weight)
        if kind == "lq":
            # range inside the weight spread so the clip bounds receive gradient
            lo, hi = np.quantile(weight, [0.1, 0.9])
            return LinearWeights(weight, 3, float(lo), float(hi))
        if kind == "projvq":
            q = ProjVQWeights(weight, 2, 2, 3, rng=rng)
            _interior_clip(q.params["s_lo"], q.params["s_hi"])
            return q
        return HAVQWeights(weight, 2, 2, rng=rng)

    if kind == "mixed":
        first = MixedLayer("l1", w(4, 2), rng.standard_normal(4) * 0.1, vec_len=2, b_index=2,
                           lq_bits=3, rng=rng, arch=ArchParams(rng.normal(0.0, 0.5, 2)))
        lo, hi = np.quantile(first.lq.weight, [0.1, 0.9])
        first.lq.params["clip_lo"][...] = lo
        first.lq.params["clip_hi"][...] = hi
        second = QuantLinear("l2", FloatWeights(w(2, 4)), rng.standard_normal(2) * 0.1)
        return MLP([first, second], seed=int(rng.integers(2**31))), 2
    first = QuantLinear("l1", quant(w(4, 3)), rng.standard_normal(4) * 0.1)
    second = QuantLinear("l2", quant(w(3, 4)), rng.standard_normal(3) * 0.1)
    return MLP([first, second]), 3


def _kink_margin(model, x, step):
    """Smallest |pre-activation| at the hidden ReLU; FD is invalid near a kink."""
    h = x
    layer = model.layers[0]
    if isinstance(layer, MixedLayer):
        h = layer.forward(h, training=True, rng=make_rng(model.seed, 4, 0, step))
    else:
        h = layer.forward(h, training=True)
    return float(np.abs(h).min())


def check_end_to_end(n_instances=100, seed=0, corrupt=(), beta=1e-3):
    """Assembled 2-layer model: backward vs FD of the surrogate loss CE + beta*E[storage]."""
    worst = 0.0
    k = _scale(corrupt, "end_to_end")
    for t in range(n_instances):
        kind = E2E_KINDS[t % len(E2E_KINDS)]
        for attempt in range(50):
            rng = make_rng(seed, 105, t, attempt)
            model, d_in = _e2e_model(kind, rng)
            x = rng.standard_normal((5, d_in))
            if _kink_margin(model, x, t) > 1e-3:
                break
        labels = rng.integers(0, model.layers[-1].bias.size, 5)
        b = beta if kind == "mixed" else 0.0
        logits = model.forward(x, training=True, step=t)
        _, d_logits = softmax_cross_entropy(logits, labels)
        model.backward(d_logits, beta=b)
        grads = model.grads()
        model.set_reference()

        def f():
            ce, _ = softmax_cross_entropy(model.forward(x, surrogate=True), labels)
            return ce + b * model.expected_storage_sum()

        for name, arr, _ in model.param_items():
            analytic = np.asarray(grads.get(name, np.zeros(arr.shape)), dtype=np.float64)
            worst = max(worst, rel_err(k * analytic, fd_grad(f, arr), rtol=E2E_RTOL))
    return CheckResult("end_to_end", worst, n_instances, E2E_RTOL)


SUITES = {
    "lq_backward": check_lq,
    "projvq_backward": check_projvq,
    "havq_backward": check_havq,
    "arch_backward": check_arch,
    "end_to_end": check_end_to_end,
}


def run_suites(ops=None, n_instances=100, seed=0, corrupt=()):
    ops = list(ops) if ops else list(OPS)
    return [SUITES[op](n_instances=n_instances, seed=seed, corrupt=tuple(corrupt)) for op in ops]
