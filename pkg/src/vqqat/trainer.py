"""QAT training loop: SGD with momentum, cosine-annealed LR, metrics and checkpoints."""
import csv
import json
import logging
import math
import os
from dataclasses import dataclass, field

import numpy as np

from vqqat import config as config_mod
from vqqat.codebook import Codebook
from vqqat.data import SyntheticSpec, class_means, load_idx, make_synthetic
from vqqat.errors import ConfigError, NonFiniteError
from vqqat.layers import DECAYED_GROUPS
from vqqat.model import build_model, softmax_cross_entropy
from vqqat.nas import ArchParams, BudgetController, arch_report, total_loss, update_budget
from vqqat.numerics import STREAM_DATA, STREAM_SHUFFLE, make_rng

log = logging.getLogger(__name__)

METRICS_FILE = "metrics.csv"
CHECKPOINT_FILE = "checkpoint.json"
ARCH_REPORT_FILE = "arch_report.json"


def cosine_lr(t, total, lr0):
    if t >= total:
        return 0.0
    return 0.5 * lr0 * (1.0 + math.cos(math.pi * t / total))


@dataclass
class OptimState:
    lr0: float
    total_epochs: int
    momentum: float = 0.9
    weight_decay: float = 1e-4
    epoch: int = 0
    step: int = 0
    lr_scales: dict = field(default_factory=dict)
    buffers: dict = field(default_factory=dict)

    @property
    def lr(self):
        return cosine_lr(self.epoch, self.total_epochs, self.lr0)

    def to_json(self):
        return {
            "lr0": self.lr0,
            "total_epochs": self.total_epochs,
            "momentum": self.momentum,
            "weight_decay": self.weight_decay,
            "epoch": self.epoch,
            "step": self.step,
            "lr_scales": self.lr_scales,
            "buffers": {k: {"shape": list(v.shape), "data": v.reshape(-1).tolist()}
                        for k, v in self.buffers.items()},
        }

    @classmethod
    def from_json(cls, obj):
        bufs = {k: np.array(v["data"], dtype=np.float64).reshape(v["shape"])
                for k, v in obj["buffers"].items()}
        return cls(obj["lr0"], obj["total_epochs"], obj["momentum"], obj["weight_decay"],
                   obj["epoch"], obj["step"], dict(obj["lr_scales"]), bufs)


def sgd_step(params, grads, opt, lr=None):
    """v <- mu*v + (g + wd*p); p <- p - lr*v, in place.

    ``params`` is a list of (name, array, group). Weight decay only touches
    the weight and bias groups. Parameters without a gradient are skipped.
    """
    lr = opt.lr if lr is None else lr
    for name, p, grp in params:
        g = grads.get(name)
        if g is None:
            continue
        g = np.asarray(g, dtype=np.float64)
        if grp in DECAYED_GROUPS and opt.weight_decay:
            g = g + opt.weight_decay * p
        v = opt.buffers.get(name)
        if v is None:
            v = np.zeros_like(p)
            opt.buffers[name] = v
        v *= opt.momentum
        v += g
        p -= lr * opt.lr_scales.get(grp, 1.0) * v


@dataclass
class MetricsRow:
    epoch: int
    train_loss: float
    train_acc: float
    eval_acc: float
    avg_bits: float
    lr: float
    entropy: dict = field(default_factory=dict)
    dead: dict = field(default_factory=dict)
    predictions: np.ndarray = field(default=None, repr=False, compare=False)
    targets: np.ndarray = field(default=None, repr=False, compare=False)

    def csv_fields(self):
        row = [self.epoch, self.train_loss, self.train_acc, self.eval_acc, self.avg_bits, self.lr]
        for name in self.entropy:
            row += [self.entropy[name], self.dead[name]]
        return [repr(v) if isinstance(v, float) else str(v) for v in row]

    def csv_header(self):
        head = ["epoch", "train_loss", "train_acc", "eval_acc", "avg_bits", "lr"]
        for name in self.entropy:
            head += [f"entropy_{name}", f"dead_{name}"]
        return head


def _check_finite(grads, step):
    for name, g in grads.items():
        if not np.all(np.isfinite(g)):
            raise NonFiniteError(name, step)


def accuracy(model, data):
    if len(data) == 0:
        return 0.0
    return float((model.predict(data.features) == data.labels).mean())


def train_epoch(model, data, opt, nas_ctrl, rng, eval_data=None, beta=0.0, batch_size=32):
    """One pass over ``data``; returns the epoch's metrics.

    The budget check runs at the end of the epoch when ``nas_ctrl`` is given.
    """
    n = len(data)
    order = rng.permutation(n)
    lr = opt.lr
    lam = 0.5 * opt.weight_decay
    params = model.param_items()
    loss_sum = 0.0
    preds = np.empty(n, dtype=np.int64)
    for start in range(0, n, batch_size):
        idx = order[start:start + batch_size]
        xb, yb = data.features[idx], data.labels[idx]
        logits = model.forward(xb, training=True, step=opt.step)
        ce, d_logits = softmax_cross_entropy(logits, yb)
        loss = total_loss(ce, model.weights_sq_norm(), model.expected_storage_sum(), lam, beta)
        if not math.isfinite(loss):
            raise NonFiniteError("loss", opt.step)
        model.backward(d_logits, beta=beta)
        grads = model.grads()
        _check_finite(grads, opt.step)
        sgd_step(params, grads, opt, lr)
        model.post_step()
        loss_sum += loss * len(idx)
        preds[start:start + len(idx)] = np.argmax(logits, axis=1)
        opt.step += 1
    targets = data.labels[order]
    if nas_ctrl is not None:
        update_budget(nas_ctrl, model.mixed_layers(), epoch=opt.epoch)
    row = MetricsRow(
        epoch=opt.epoch,
        train_loss=loss_sum / n,
        train_acc=float((preds == targets).mean()),
        eval_acc=accuracy(model, eval_data) if eval_data is not None else float("nan"),
        avg_bits=float(model.avg_bits()),
        lr=lr,
        predictions=preds,
        targets=targets,
    )
    for layer in model.vq_layers():
        stats = layer.utilization()
        row.entropy[layer.name] = float(stats.entropy)
        row.dead[layer.name] = int(stats.dead_count)
    opt.epoch += 1
    return row


# -- datasets ---------------------------------------------------------------


def load_datasets(cfg):
    d = cfg.data
    if d.kind == "synthetic":
        spec = SyntheticSpec(d.n_train, d.dim, d.classes, d.separation)
        means = class_means(spec, make_rng(cfg.seed, STREAM_DATA, 0))
        train = make_synthetic(spec, make_rng(cfg.seed, STREAM_DATA, 1), means=means)
        eval_spec = SyntheticSpec(d.n_eval, d.dim, d.classes, d.separation)
        evald = make_synthetic(eval_spec, make_rng(cfg.seed, STREAM_DATA, 2), means=means)
        return train, evald
    classes = cfg.layers[-1].out_dim
    train = load_idx(d.train_images, d.train_labels, classes)
    evald = None
    if d.eval_images and d.eval_labels:
        evald = load_idx(d.eval_images, d.eval_labels, classes)
    if train.dim != cfg.layers[0].in_dim:
        raise ConfigError(
            f"config.data: idx features have width {train.dim}, first layer expects {cfg.layers[0].in_dim}"
        )
    return train, evald


# -- checkpoints ------------------------------------------------------------


def _arr_json(a):
    return {"shape": list(a.shape), "data": a.reshape(-1).tolist()}


def _arr_load(obj):
    return np.array(obj["data"], dtype=np.float64).reshape(obj["shape"])


def checkpoint_dict(cfg, model, opt=None, epoch=0, extra=None):
    params, codebooks, arch, qstate = {}, {}, {}, {}
    for layer in model.layers:
        for k, v, grp in layer.param_items():
            if grp == "codebook":
                cb_owner = layer.vq if k.startswith("vq.") else layer.quant
                codebooks[f"{layer.name}.{k}"] = cb_owner.codebook.to_json()
            elif grp == "arch":
                arch[layer.name] = layer.arch.to_json()
            else:
                params[f"{layer.name}.{k}"] = _arr_json(v)
        owner = getattr(layer, "quant", None)
        if owner is not None and owner.state():
            qstate[layer.name] = owner.state()
    out = {
        "schema": 1,
        "model_spec": {"layers": [l.__dict__ for l in cfg.layers],
                       "quant": {k: v.__dict__ for k, v in cfg.quant.items()}},
        "config": cfg.to_json(),
        "parameters": params,
        "codebooks": codebooks,
        "arch_params": arch,
        "quant_state": qstate,
        "optimizer": opt.to_json() if opt is not None else None,
        "rng_state": {"seed": cfg.seed, "step": opt.step if opt else 0, "epoch": epoch},
        "epoch": epoch,
    }
    if extra:
        out.update(extra)
    return out


def save_checkpoint(path, cfg, model, opt=None, epoch=0, extra=None):
    with open(path, "w") as f:
        json.dump(checkpoint_dict(cfg, model, opt, epoch, extra), f)


def read_checkpoint(path):
    try:
        with open(path) as f:
            return json.load(f)
    except (OSError, json.JSONDecodeError) as e:
        raise ConfigError(f"cannot read checkpoint {path}: {e}") from None


def float_params(ck):
    """Latent weights and biases keyed "<layer>.weight"/"<layer>.bias".

    For searched layers the weights of the currently preferred branch are used.
    """
    params = {k: _arr_load(v) for k, v in ck["parameters"].items()}
    out = {}
    for layer in ck["model_spec"]["layers"]:
        name = layer["name"]
        if f"{name}.weight" in params:
            out[f"{name}.weight"] = params[f"{name}.weight"]
        else:
            arch = ArchParams.from_json(ck["arch_params"][name])
            choice = arch.frozen_choice if arch.frozen else arch.argmax_choice()
            out[f"{name}.weight"] = params[f"{name}.{choice}.weight"]
        out[f"{name}.bias"] = params[f"{name}.bias"]
    return out


def load_model(ck):
    """Rebuild the model stored in a checkpoint dict, restoring every parameter exactly."""
    cfg = config_mod.parse_config(ck["config"])
    model = build_model(cfg)
    params = {k: _arr_load(v) for k, v in ck["parameters"].items()}
    for layer in model.layers:
        for k, v, grp in layer.param_items():
            full = f"{layer.name}.{k}"
            if grp == "codebook":
                v[...] = Codebook.from_json(ck["codebooks"][full]).entries
            elif grp == "arch":
                saved = ArchParams.from_json(ck["arch_params"][layer.name])
                layer.arch.logits[...] = saved.logits
                layer.arch.frozen = saved.frozen
                layer.arch.frozen_choice = saved.frozen_choice
            else:
                v[...] = params[full]
        owner = getattr(layer, "quant", None)
        if owner is not None and layer.name in ck.get("quant_state", {}):
            owner.load_state(ck["quant_state"][layer.name])
    return cfg, model


# -- full run ---------------------------------------------------------------


def make_optimizer(cfg):
    o = cfg.optim
    scales = {"codebook": o.codebook_lr_scale, "clip": o.clip_lr_scale, "arch": cfg.nas.arch_lr_scale}
    return OptimState(o.lr, o.epochs, o.momentum, o.weight_decay, lr_scales=scales)


def init_params_for(cfg):
    if not cfg.init_checkpoint:
        return None
    return float_params(read_checkpoint(cfg.init_checkpoint))


def run_training(cfg, out_dir, on_epoch=None):
    """Train per ``cfg``; writes metrics CSV, checkpoint, and (for NAS) the search report."""
    os.makedirs(out_dir, exist_ok=True)
    train, evald = load_datasets(cfg)
    model = build_model(cfg, init_params=init_params_for(cfg))
    opt = make_optimizer(cfg)
    nas_on = cfg.nas.enabled
    ctrl = BudgetController(cfg.nas.budget) if nas_on and cfg.nas.budget is not None else None
    beta = cfg.nas.beta if nas_on else 0.0
    p_hist = {l.name: [] for l in model.mixed_layers()}
    rows = []
    metrics_path = os.path.join(out_dir, METRICS_FILE)
    with open(metrics_path, "w", newline="") as f:
        writer = csv.writer(f, lineterminator="\n")
        for epoch in range(cfg.optim.epochs):
            rng = make_rng(cfg.seed, STREAM_SHUFFLE, epoch)
            row = train_epoch(model, train, opt, ctrl, rng, eval_data=evald, beta=beta,
                              batch_size=cfg.optim.batch_size)
            if epoch == 0:
                writer.writerow(row.csv_header())
            writer.writerow(row.csv_fields())
            f.flush()
            for layer in model.mixed_layers():
                p_hist[layer.name].append(layer.arch.effective_p)
            log.info("epoch %d loss %.4f train_acc %.4f eval_acc %.4f bits %.3f",
                     row.epoch, row.train_loss, row.train_acc, row.eval_acc, row.avg_bits)
            rows.append(row)
            if on_epoch is not None:
                on_epoch(row, model)
    extra = {"budget": ctrl.to_json()} if ctrl is not None else None
    save_checkpoint(os.path.join(out_dir, CHECKPOINT_FILE), cfg, model, opt, opt.epoch, extra)
    if nas_on:
        report = arch_report(model.mixed_layers(), p_hist)
        with open(os.path.join(out_dir, ARCH_REPORT_FILE), "w") as f:
            json.dump(report, f, indent=2)
    with open(os.path.join(out_dir, "config.json"), "w") as f:
        f.write(cfg.dumps())
    return rows, model
