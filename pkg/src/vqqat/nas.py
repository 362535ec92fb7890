"""Layer-wise VQ/LQ selection with binary gates and a global bit budget.

Each searched layer keeps two weight branches (hard-attention or projection
VQ, and uniform LQ) plus two architecture logits. Training samples one
branch per step; the gate's gradient is taken as if the gate were the
softmax probability. Once the expected network bitwidth drops below the
budget every layer is frozen to its most probable branch.
"""
import math
from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np

from vqqat.errors import ConfigError
from vqqat.layers import HAVQWeights, LinearWeights, ProjVQWeights

VQ = "vq"
LQ = "lq"


def _sigmoid(x):
    if x >= 0:
        return 1.0 / (1.0 + math.exp(-x))
    e = math.exp(x)
    return e / (1.0 + e)


@dataclass
class ArchParams:
    logits: np.ndarray = field(default_factory=lambda: np.zeros(2))
    frozen: bool = False
    frozen_choice: str = None

    def __post_init__(self):
        self.logits = np.array(self.logits, dtype=np.float64).reshape(2)

    @property
    def logit_vq(self):
        return float(self.logits[0])

    @property
    def logit_lq(self):
        return float(self.logits[1])

    @property
    def p_vq(self):
        """softmax([a, b])[0]."""
        return _sigmoid(self.logit_vq - self.logit_lq)

    @property
    def effective_p(self):
        if self.frozen:
            return 1.0 if self.frozen_choice == VQ else 0.0
        return self.p_vq

    def argmax_choice(self):
        # exact tie goes to LQ
        return VQ if self.p_vq > 0.5 else LQ

    def freeze(self, choice=None):
        if self.frozen:
            return
        self.frozen_choice = self.argmax_choice() if choice is None else choice
        self.frozen = True

    def to_json(self):
        return {"logits": self.logits.tolist(), "frozen": self.frozen, "frozen_choice": self.frozen_choice}

    @classmethod
    def from_json(cls, obj):
        return cls(np.array(obj["logits"]), obj["frozen"], obj["frozen_choice"])


def sample_branch(arch, rng):
    """Bernoulli(p_vq) draw; VQ iff u < p_vq. Frozen params return their choice."""
    p = arch.p_vq
    if arch.frozen:
        return arch.frozen_choice, p
    u = rng.random()
    return (VQ if u < p else LQ), p


class MixedLayer:
    """Affine layer whose weights come from a sampled VQ or LQ branch."""

    def __init__(self, name, weight, bias, vec_len, b_index, lq_bits, rng,
                 vq_kind="havq", b_scalar=None, allow_padding=True, arch=None):
        self.name = name
        w = np.array(weight, dtype=np.float64)
        if vq_kind == "havq":
            self.vq = HAVQWeights(w.copy(), vec_len, b_index, rng=rng, allow_padding=allow_padding)
        elif vq_kind == "projvq":
            if b_scalar is None:
                raise ConfigError(f"layer {name}: projection VQ branch needs b_scalar")
            self.vq = ProjVQWeights(w.copy(), vec_len, b_index, b_scalar, rng=rng,
                                    allow_padding=allow_padding)
        else:
            raise ConfigError(f"layer {name}: unknown VQ branch kind {vq_kind!r}")
        self.vq_kind = vq_kind
        self.lq = LinearWeights(w.copy(), lq_bits)
        if self.vq.weight.shape != self.lq.weight.shape:
            raise ConfigError("branch weight shapes differ")
        self.bias = np.array(bias, dtype=np.float64)
        self.arch = arch if arch is not None else ArchParams()
        self.lq_bits = int(lq_bits)
        self.choice = None
        self.grads = {}

    kind = "mixed"

    @property
    def n_weights(self):
        return self.vq.n_weights

    @property
    def vec_len(self):
        return self.vq.vec_len

    @property
    def q_vq(self):
        """Bits stored per VQ vector (index, plus scalar for projection VQ)."""
        return self.vq.b_index + (self.vq.b_scalar if self.vq_kind == "projvq" else 0)

    def branch(self, choice):
        return self.vq if choice == VQ else self.lq

    def pure_storage(self, choice):
        if choice == VQ:
            return self.n_weights / self.vec_len * self.q_vq
        return float(self.lq_bits * self.n_weights)

    def bits_per_weight(self, choice=None):
        choice = choice or (self.arch.frozen_choice if self.arch.frozen else self.arch.argmax_choice())
        if choice == VQ:
            return float(Fraction(self.q_vq, self.vec_len))
        return float(self.lq_bits)

    def storage_bits(self):
        return expected_storage(self)

    def param_items(self):
        items = [(f"vq.{k}", v, self.vq.groups[k]) for k, v in self.vq.params.items()]
        items += [(f"lq.{k}", v, self.lq.groups[k]) for k, v in self.lq.params.items()]
        items.append(("arch", self.arch.logits, "arch"))
        items.append(("bias", self.bias, "bias"))
        return items

    def forward(self, x, training=True, step=0, surrogate=False, rng=None):
        self._x = x
        if surrogate:
            wq = self.branch(self.choice).surrogate()
            self._wq = wq
            y = x @ wq.T + self.bias
            if not self.arch.frozen:
                y = y + (self.arch.p_vq - self._ref_p) * self._ref_dy
            return y
        if training:
            y, self.choice = mixed_forward(self, x, rng)
            return y
        self.choice = self.arch.frozen_choice if self.arch.frozen else self.arch.argmax_choice()
        self._wq = self.branch(self.choice).quantize(training=False)
        return x @ self._wq.T + self.bias

    def branch_outputs(self, x):
        """(y_vq, y_lq) on input ``x``; the unsampled branch is quantized on demand."""
        out = {}
        for c in (VQ, LQ):
            if c == self.choice:
                out[c] = x @ self._wq.T + self.bias
            else:
                wq = self.branch(c).quantize(training=True)
                out[c] = x @ wq.T + self.bias
        return out[VQ], out[LQ]

    def set_reference(self):
        self.branch(self.choice).set_reference()
        self._ref_p = self.arch.p_vq
        y_vq, y_lq = self.branch_outputs(self._x)
        self._ref_dy = y_vq - y_lq

    def backward(self, dy):
        prefix = "vq." if self.choice == VQ else "lq."
        branch = self.branch(self.choice)
        g = branch.backward(dy.T @ self._x)
        self.grads = {prefix + k: v for k, v in g.items()}
        self.grads["bias"] = dy.sum(axis=0)
        if not self.arch.frozen:
            y_vq, y_lq = self.branch_outputs(self._x)
            self.grads["arch"] = arch_backward(dy, y_vq, y_lq, self.arch)
        return dy @ self._wq

    def arch_grads(self, beta):
        """Gradient of beta * E[storage] with respect to the logits."""
        if self.arch.frozen or beta == 0.0:
            return np.zeros(2)
        p = self.arch.p_vq
        return storage_grad_p(self, beta) * p * (1.0 - p) * np.array([1.0, -1.0])

    def post_step(self):
        self.vq.post_step()
        self.lq.post_step()

    def utilization(self):
        return self.vq.utilization()

    def codebook(self):
        return self.vq.codebook


def mixed_forward(layer, x, rng):
    x = np.asarray(x, dtype=np.float64)
    if x.shape[-1] != layer.vq.weight.shape[1]:
        raise ConfigError(
            f"layer {layer.name}: input width {x.shape[-1]} != {layer.vq.weight.shape[1]}"
        )
    choice, _ = sample_branch(layer.arch, rng)
    layer.choice = choice
    layer._x = x
    layer._wq = layer.branch(choice).quantize(training=True)
    return x @ layer._wq.T + layer.bias, choice


def arch_backward(g, y_vq, y_lq, arch):
    """Gradient w.r.t. (a, b) of <g, p*y_vq + (1-p)*y_lq>, p = softmax([a, b])[0]."""
    if arch.frozen:
        return np.zeros(2)
    d_p = float(np.sum(np.asarray(g) * (np.asarray(y_vq) - np.asarray(y_lq))))
    p = arch.p_vq
    dp_da = p * (1.0 - p)
    return np.array([d_p * dp_da, -d_p * dp_da])


def expected_storage(layer):
    """p * (N/L) * Q_vq + (1 - p) * Q_lq * N, in bits."""
    p = layer.arch.effective_p
    return p * layer.pure_storage(VQ) + (1.0 - p) * layer.pure_storage(LQ)


def storage_grad_p(layer, beta):
    """d(beta * E[storage]) / d p_vq."""
    return beta * (layer.pure_storage(VQ) - layer.pure_storage(LQ))


def total_loss(ce, weights_sq_norm, sum_expected_storage, lam, beta):
    return ce + lam * weights_sq_norm + beta * sum_expected_storage


@dataclass
class BudgetController:
    target_avg_bits: float
    current_avg_bits: float = float("inf")
    triggered: bool = False
    trigger_epoch: int = None

    def to_json(self):
        return {
            "target_avg_bits": self.target_avg_bits,
            "current_avg_bits": self.current_avg_bits,
            "triggered": self.triggered,
            "trigger_epoch": self.trigger_epoch,
        }


def average_bits(layers):
    total_bits = sum(expected_storage(l) for l in layers)
    total_w = sum(l.n_weights for l in layers)
    return total_bits / total_w


def update_budget(ctrl, layers, epoch=None):
    """Recompute the expected average bitwidth; freeze everything the first time it meets the target.

    Returns True only on the call that triggers the freeze.
    """
    if not layers:
        return False
    ctrl.current_avg_bits = average_bits(layers)
    if ctrl.triggered or ctrl.current_avg_bits > ctrl.target_avg_bits:
        return False
    for layer in layers:
        layer.arch.freeze()
    ctrl.triggered = True
    ctrl.trigger_epoch = epoch
    return True


def arch_report(layers, p_history):
    """Per-layer search summary; ``p_history`` maps layer name to its p_vq trace."""
    report = []
    for layer in layers:
        hist = list(p_history.get(layer.name, []))
        choice = layer.arch.frozen_choice if layer.arch.frozen else layer.arch.argmax_choice()
        summary = {"n": len(hist)}
        if hist:
            summary.update(first=hist[0], last=hist[-1], min=min(hist), max=max(hist),
                           mean=sum(hist) / len(hist))
        report.append({
            "layer_name": layer.name,
            "final_choice": choice,
            "frozen": layer.arch.frozen,
            "p_vq_history_summary": summary,
            "bits_per_weight": layer.bits_per_weight(choice),
            "n_weights": layer.n_weights,
        })
    return report
