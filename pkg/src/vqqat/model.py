"""Feed-forward classifier built from quantized affine layers with ReLU between them."""
import math

import numpy as np

from vqqat.errors import ConfigError
from vqqat.layers import DECAYED_GROUPS, QuantLinear, make_weight_quantizer
from vqqat.nas import MixedLayer
from vqqat.numerics import STREAM_INIT, STREAM_KMEANS, STREAM_NAS, make_rng


def softmax_cross_entropy(logits, labels):
    """Mean cross-entropy and its gradient with respect to the logits."""
    z = logits - logits.max(axis=1, keepdims=True)
    logp = z - np.log(np.exp(z).sum(axis=1, keepdims=True))
    n = logits.shape[0]
    loss = -float(logp[np.arange(n), labels].mean())
    d = np.exp(logp)
    d[np.arange(n), labels] -= 1.0
    return loss, d / n


class MLP:
    def __init__(self, layers, seed=0):
        self.layers = layers
        self.seed = int(seed)
        for i, layer in enumerate(layers):
            layer.index = i

    def forward(self, x, training=True, step=0, surrogate=False):
        h = np.asarray(x, dtype=np.float64)
        self._masks = []
        last = len(self.layers) - 1
        for i, layer in enumerate(self.layers):
            if isinstance(layer, MixedLayer):
                rng = make_rng(self.seed, STREAM_NAS, i, step) if training and not surrogate else None
                h = layer.forward(h, training=training, step=step, surrogate=surrogate, rng=rng)
            else:
                h = layer.forward(h, training=training, step=step, surrogate=surrogate)
            if i < last:
                mask = h > 0
                self._masks.append(mask)
                h = h * mask
        return h

    def backward(self, d_logits, beta=0.0):
        d = d_logits
        for i in range(len(self.layers) - 1, -1, -1):
            layer = self.layers[i]
            if i < len(self.layers) - 1:
                d = d * self._masks[i]
            d = layer.backward(d)
            if isinstance(layer, MixedLayer) and beta and "arch" in layer.grads:
                layer.grads["arch"] = layer.grads["arch"] + layer.arch_grads(beta)
        return d

    def set_reference(self):
        for layer in self.layers:
            layer.set_reference()

    def param_items(self):
        return [(f"{l.name}.{k}", v, g) for l in self.layers for k, v, g in l.param_items()]

    def grads(self):
        return {f"{l.name}.{k}": v for l in self.layers for k, v in l.grads.items()}

    def post_step(self):
        for layer in self.layers:
            layer.post_step()

    def mixed_layers(self):
        return [l for l in self.layers if isinstance(l, MixedLayer)]

    def quantized_layers(self):
        return [l for l in self.layers if l.kind != "float"]

    def vq_layers(self):
        return [l for l in self.layers if l.kind in ("havq", "projvq", "mixed")]

    def weights_sq_norm(self):
        """Sum of squares over decayed parameters (latent weights and biases)."""
        total = 0.0
        for _, v, g in self.param_items():
            if g in DECAYED_GROUPS:
                total += float(np.dot(v.reshape(-1), v.reshape(-1)))
        return total

    def storage_bits(self):
        return sum(l.storage_bits() for l in self.quantized_layers())

    def avg_bits(self):
        """Bits per weight over quantized layers; float-only models report 32."""
        ql = self.quantized_layers()
        if not ql:
            return 32.0
        return self.storage_bits() / sum(l.n_weights for l in ql)

    def expected_storage_sum(self):
        return sum(l.storage_bits() for l in self.mixed_layers())

    def predict(self, x):
        return np.argmax(self.forward(x, training=False), axis=1)


def he_init(in_dim, out_dim, rng):
    w = rng.standard_normal((out_dim, in_dim)) * math.sqrt(2.0 / in_dim)
    return w, np.zeros(out_dim)


def build_model(cfg, seed=None, init_params=None):
    """Model for a RunConfig. ``init_params`` maps "<layer>.weight"/"<layer>.bias" to arrays."""
    seed = cfg.seed if seed is None else seed
    init_params = init_params or {}
    layers = []
    for i, spec in enumerate(cfg.layers):
        w, b = he_init(spec.in_dim, spec.out_dim, make_rng(seed, STREAM_INIT, i))
        if f"{spec.name}.weight" in init_params:
            w = np.array(init_params[f"{spec.name}.weight"], dtype=np.float64)
            if w.shape != (spec.out_dim, spec.in_dim):
                raise ConfigError(f"layer '{spec.name}': initial weight has shape {w.shape}")
        if f"{spec.name}.bias" in init_params:
            b = np.array(init_params[f"{spec.name}.bias"], dtype=np.float64)
        q = cfg.quant_for(spec.name)
        rng = make_rng(seed, STREAM_KMEANS, i)
        if q.kind == "mixed":
            layers.append(MixedLayer(spec.name, w, b, q.vec_len, q.b_index, q.lq_bits, rng,
                                     vq_kind=q.vq_kind, b_scalar=q.b_scalar,
                                     allow_padding=q.allow_padding))
        else:
            layers.append(QuantLinear(spec.name, make_weight_quantizer(q, w, rng), b))
    return MLP(layers, seed)
