"""Command-line entry point: ``vqqat {train,quantize,eval,gradcheck,report}``.

Exit codes: 0 success, 1 gradient check failure, 2 invalid input,
3 non-finite values during training. Errors print one line prefixed
``error:`` to stderr.
"""
import argparse
import csv
import json
import logging
import os
import sys

import numpy as np

from vqqat import config as config_mod
from vqqat import gradcheck
from vqqat.errors import ConfigError, IDXParseError, NonFiniteError
from vqqat.model import build_model
from vqqat.trainer import (
    ARCH_REPORT_FILE,
    CHECKPOINT_FILE,
    METRICS_FILE,
    accuracy,
    checkpoint_dict,
    float_params,
    load_datasets,
    load_model,
    read_checkpoint,
    run_training,
)

EXIT_OK = 0
EXIT_CHECK_FAILED = 1
EXIT_INVALID = 2
EXIT_NONFINITE = 3


class CLIError(Exception):
    def __init__(self, message, code=EXIT_INVALID):
        super().__init__(message)
        self.code = code


def _load_config(args, required=True):
    if not args.config:
        if required:
            raise ConfigError("--config is required")
        return None
    cfg = config_mod.load(args.config)
    if args.seed is not None:
        cfg.seed = args.seed
    if args.out is not None:
        cfg.output_dir = args.out
    config_mod.validate(cfg)
    return cfg


def _dump(path, obj):
    with open(path, "w") as f:
        json.dump(obj, f, indent=2)


def cmd_train(args):
    cfg = _load_config(args)
    rows, _ = run_training(cfg, cfg.output_dir)
    last = rows[-1]
    print(f"trained {len(rows)} epochs: train_acc={last.train_acc:.4f} "
          f"eval_acc={last.eval_acc:.4f} avg_bits={last.avg_bits:.4f} -> {cfg.output_dir}")
    return EXIT_OK


def quantize_checkpoint(ck, cfg):
    """Post-training quantization of a checkpoint's weights under ``cfg.quant``.

    Returns (model, report, quantized) where ``quantized`` holds per-layer
    codebook assignments (and projection scalars) for the written checkpoint.
    """
    spec_layers = [(l["name"], l["in_dim"], l["out_dim"]) for l in ck["model_spec"]["layers"]]
    cfg_layers = [(l.name, l.in_dim, l.out_dim) for l in cfg.layers]
    if spec_layers != cfg_layers:
        raise ConfigError("quant config layers do not match the checkpoint's model")
    for name, q in cfg.quant.items():
        if q.kind == "mixed":
            raise ConfigError(f"config.quant.{name}: 'mixed' is a training-time search, not a PTQ target")
    fp = float_params(ck)
    model = build_model(cfg, init_params=fp)
    report, quantized = [], {}
    for layer in model.layers:
        w = fp[f"{layer.name}.weight"]
        wq = layer.quant.quantize(training=False)
        bpw = layer.quant.bits_per_weight()
        entry = {
            "layer": layer.name,
            "kind": layer.kind,
            "n_weights": int(w.size),
            "mse": float(np.mean((w - wq) ** 2)),
            "bits_per_weight": float(bpw),
            "compression_ratio": float(32 / bpw),
        }
        report.append(entry)
        if layer.kind in ("havq", "projvq"):
            q = {"assignments": layer.quant.assignments().tolist(), "vec_len": layer.quant.vec_len}
            if layer.kind == "projvq":
                q["scalars"] = layer.quant._res.aux["s"].tolist()
            quantized[layer.name] = q
        elif layer.kind == "lq":
            quantized[layer.name] = {"clip_lo": float(layer.quant.params["clip_lo"]),
                                     "clip_hi": float(layer.quant.params["clip_hi"]),
                                     "bits": layer.quant.bits}
    return model, report, quantized


def cmd_quantize(args):
    if not args.checkpoint:
        raise ConfigError("--checkpoint is required")
    cfg = _load_config(args)
    ck = read_checkpoint(args.checkpoint)
    model, report, quantized = quantize_checkpoint(ck, cfg)
    out = args.out or cfg.output_dir
    os.makedirs(out, exist_ok=True)
    with open(os.path.join(out, CHECKPOINT_FILE), "w") as f:
        json.dump(checkpoint_dict(cfg, model, extra={"quantized": quantized}), f)
    _dump(os.path.join(out, "quantize_report.json"), report)
    for e in report:
        print(f"{e['layer']}: {e['kind']} mse={e['mse']:.6g} bits/weight={e['bits_per_weight']:g} "
              f"CR={e['compression_ratio']:g}")
    return EXIT_OK


def cmd_eval(args):
    if not args.checkpoint:
        raise ConfigError("--checkpoint is required")
    ck = read_checkpoint(args.checkpoint)
    ck_cfg, model = load_model(ck)
    cfg = _load_config(args, required=False) or ck_cfg
    train, evald = load_datasets(cfg)
    result = {"train_acc": accuracy(model, train),
              "eval_acc": accuracy(model, evald) if evald is not None else None,
              "avg_bits": float(model.avg_bits())}
    print(json.dumps(result))
    return EXIT_OK


def cmd_gradcheck(args):
    settings = {}
    if args.config:
        try:
            with open(args.config) as f:
                settings = json.load(f)
        except (OSError, json.JSONDecodeError) as e:
            raise ConfigError(f"gradcheck config: {e}") from None
    ops = args.op or settings.get("ops") or list(gradcheck.OPS)
    unknown = [op for op in ops if op not in gradcheck.SUITES]
    if unknown:
        raise ConfigError(f"unknown gradcheck op '{unknown[0]}' (choose from {', '.join(gradcheck.OPS)})")
    n = args.instances or settings.get("n_instances", 100)
    seed = args.seed if args.seed is not None else settings.get("seed", 0)
    results = gradcheck.run_suites(ops, n_instances=n, seed=seed, corrupt=args.corrupt or ())
    for r in results:
        status = "PASS" if r.passed else "FAIL"
        print(f"{r.op:16s} max_rel_err={r.max_rel_err:.3e} tol={r.tol:.0e} n={r.n_instances} {status}")
    bad = [r.op for r in results if not r.passed]
    if bad:
        raise CLIError(f"gradient check failed: {', '.join(bad)}", EXIT_CHECK_FAILED)
    return EXIT_OK


def _read_metrics(path):
    with open(path, newline="") as f:
        rows = list(csv.DictReader(f))
    if not rows:
        raise ConfigError(f"{path}: no metrics rows")
    return rows


def summarize_run(run_dir):
    metrics_path = os.path.join(run_dir, METRICS_FILE)
    if not os.path.isfile(metrics_path):
        raise ConfigError(f"{run_dir}: missing {METRICS_FILE}")
    rows = _read_metrics(metrics_path)
    last = rows[-1]
    summary = {
        "epochs": len(rows),
        "final": {k: float(last[k]) for k in ("train_loss", "train_acc", "eval_acc", "avg_bits", "lr")},
        "utilization": {},
    }
    for col in rows[0]:
        if col.startswith("entropy_"):
            name = col[len("entropy_"):]
            summary["utilization"][name] = {
                "entropy": [float(r[col]) for r in rows],
                "dead": [int(r[f"dead_{name}"]) for r in rows],
            }
    arch_path = os.path.join(run_dir, ARCH_REPORT_FILE)
    arch = None
    if os.path.isfile(arch_path):
        with open(arch_path) as f:
            arch = json.load(f)
        summary["layer_choices"] = [{k: e[k] for k in ("layer_name", "final_choice", "bits_per_weight")}
                                    for e in arch]
    cfg_path = os.path.join(run_dir, "config.json")
    if os.path.isfile(cfg_path):
        cfg = config_mod.load(cfg_path)
        summary["bits_per_weight_from_config"] = config_bits_per_weight(cfg, arch)
    return summary


def config_bits_per_weight(cfg, arch=None):
    """Sum of storage bits over quantized layers / their weight count, from the config alone.

    Searched layers use their final branch from the architecture report.
    """
    choices = {e["layer_name"]: e["final_choice"] for e in (arch or [])}
    bits = weights = 0.0
    for layer in cfg.layers:
        q = cfg.quant_for(layer.name)
        n = layer.in_dim * layer.out_dim
        if q.kind == "float":
            continue
        if q.kind == "mixed":
            kind = "lq" if choices.get(layer.name, "lq") == "lq" else q.vq_kind
        else:
            kind = q.kind
        if kind == "lq":
            bits += q.lq_bits * n
        elif kind == "havq":
            bits += n / q.vec_len * q.b_index
        else:
            bits += n / q.vec_len * (q.b_index + q.b_scalar)
        weights += n
    return bits / weights if weights else 32.0


def cmd_report(args):
    run_dir = args.run_dir or args.out
    if not run_dir:
        raise ConfigError("a run directory is required")
    summary = summarize_run(run_dir)
    _dump(os.path.join(run_dir, "summary.json"), summary)
    print(json.dumps(summary, indent=2))
    return EXIT_OK


def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON config path")
    common.add_argument("--seed", type=int, help="override the config seed (u64)")
    common.add_argument("--out", help="output directory")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(prog="vqqat", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", parents=[common], help="run QAT per config")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("quantize", parents=[common], help="post-training quantization of a checkpoint")
    p.add_argument("--checkpoint", help="checkpoint JSON to quantize")
    p.set_defaults(func=cmd_quantize)

    p = sub.add_parser("eval", parents=[common], help="accuracy of a checkpoint")
    p.add_argument("--checkpoint", help="checkpoint JSON")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("gradcheck", parents=[common], help="finite-difference checks of all backward rules")
    p.add_argument("--op", action="append", help="run only this suite (repeatable)")
    p.add_argument("--instances", type=int, help="random instances per suite")
    p.add_argument("--corrupt", action="append", help=argparse.SUPPRESS)
    p.set_defaults(func=cmd_gradcheck)

    p = sub.add_parser("report", parents=[common], help="summarize a run directory")
    p.add_argument("run_dir", nargs="?")
    p.set_defaults(func=cmd_report)
    return parser


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return e.code if isinstance(e.code, int) else EXIT_INVALID
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except CLIError as e:
        print(f"error: {e}", file=sys.stderr)
        return e.code
    except (ConfigError, IDXParseError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_INVALID
    except NonFiniteError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_NONFINITE


if __name__ == "__main__":
    sys.exit(main())
