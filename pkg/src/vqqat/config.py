"""Run configuration: JSON with a versioned ``schema`` field, validated before any compute."""
import dataclasses
import json
from dataclasses import dataclass, field

from vqqat.errors import ConfigError

SCHEMA_VERSION = 1
QUANT_KINDS = ("float", "lq", "projvq", "havq", "mixed")


@dataclass
class LayerSpec:
    name: str
    in_dim: int
    out_dim: int


@dataclass
class QuantConfig:
    kind: str = "float"
    vec_len: int = 8
    b_index: int = 8
    b_scalar: int = 4
    lq_bits: int = 4
    vq_kind: str = "havq"
    allow_padding: bool = True
    freeze_assignments: bool = False


@dataclass
class DataConfig:
    kind: str = "synthetic"
    n_train: int = 2000
    n_eval: int = 500
    dim: int = 16
    classes: int = 4
    separation: float = 3.0
    train_images: str = None
    train_labels: str = None
    eval_images: str = None
    eval_labels: str = None


@dataclass
class OptimConfig:
    lr: float = 0.05
    momentum: float = 0.9
    weight_decay: float = 1e-4
    epochs: int = 20
    batch_size: int = 32
    codebook_lr_scale: float = 1.0
    clip_lr_scale: float = 1.0


@dataclass
class NASConfig:
    enabled: bool = False
    beta: float = 0.0
    budget: float = None
    arch_lr_scale: float = 1.0


@dataclass
class RunConfig:
    layers: list
    schema: int = SCHEMA_VERSION
    seed: int = 0
    quant: dict = field(default_factory=dict)
    data: DataConfig = field(default_factory=DataConfig)
    optim: OptimConfig = field(default_factory=OptimConfig)
    nas: NASConfig = field(default_factory=NASConfig)
    output_dir: str = "runs/default"
    init_checkpoint: str = None

    def quant_for(self, name):
        return self.quant.get(name, QuantConfig())

    def layer_names(self):
        return [l.name for l in self.layers]

    def to_json(self):
        return dataclasses.asdict(self)

    def dumps(self):
        return json.dumps(self.to_json(), indent=2, sort_keys=True)


_TYPES = {int: (int,), float: (int, float), str: (str,), bool: (bool,)}


def _build(cls, obj, path):
    if not isinstance(obj, dict):
        raise ConfigError(f"{path}: expected an object")
    names = {f.name: f for f in dataclasses.fields(cls)}
    unknown = sorted(set(obj) - set(names))
    if unknown:
        raise ConfigError(f"{path}.{unknown[0]}: unknown field")
    kwargs = {}
    for name, f in names.items():
        if name not in obj:
            continue
        val = obj[name]
        typ = f.type if isinstance(f.type, type) else None
        if val is not None and typ in _TYPES:
            ok = isinstance(val, _TYPES[typ]) and not (typ is not bool and isinstance(val, bool))
            if not ok:
                raise ConfigError(f"{path}.{name}: expected {typ.__name__}, got {type(val).__name__}")
            if typ is float:
                val = float(val)
        kwargs[name] = val
    return cls(**kwargs)


def parse_config(obj):
    """Build and validate a RunConfig from a decoded JSON object."""
    if not isinstance(obj, dict):
        raise ConfigError("config: expected a JSON object")
    if obj.get("schema") != SCHEMA_VERSION:
        raise ConfigError(f"config.schema: expected {SCHEMA_VERSION}, got {obj.get('schema')!r}")
    if "layers" not in obj or not isinstance(obj["layers"], list) or not obj["layers"]:
        raise ConfigError("config.layers: at least one layer is required")
    obj = dict(obj)
    layers = [_build(LayerSpec, l, f"config.layers[{i}]") for i, l in enumerate(obj.pop("layers"))]
    quant_raw = obj.pop("quant", {}) or {}
    if not isinstance(quant_raw, dict):
        raise ConfigError("config.quant: expected an object keyed by layer name")
    quant = {k: _build(QuantConfig, v, f"config.quant.{k}") for k, v in quant_raw.items()}
    sub = {}
    for key, cls in (("data", DataConfig), ("optim", OptimConfig), ("nas", NASConfig)):
        if key in obj:
            sub[key] = _build(cls, obj.pop(key), f"config.{key}")
    cfg = _build(RunConfig, dict(obj, layers=[]), "config")
    cfg.layers = layers
    cfg.quant = quant
    for key, val in sub.items():
        setattr(cfg, key, val)
    validate(cfg)
    return cfg


def loads(text):
    try:
        obj = json.loads(text)
    except json.JSONDecodeError as e:
        raise ConfigError(f"config: invalid JSON ({e.msg} at line {e.lineno})") from None
    return parse_config(obj)


def load(path):
    try:
        with open(path) as f:
            text = f.read()
    except OSError as e:
        raise ConfigError(f"config: cannot read {path}: {e.strerror}") from None
    return loads(text)


def validate(cfg):
    names = cfg.layer_names()
    if len(set(names)) != len(names):
        raise ConfigError("config.layers: duplicate layer names")
    for i, layer in enumerate(cfg.layers):
        if layer.in_dim < 1 or layer.out_dim < 1:
            raise ConfigError(f"config.layers[{i}] ({layer.name}): dimensions must be >= 1")
        if i > 0 and layer.in_dim != cfg.layers[i - 1].out_dim:
            raise ConfigError(
                f"config.layers[{i}] ({layer.name}): in_dim {layer.in_dim} does not chain "
                f"with previous out_dim {cfg.layers[i - 1].out_dim}"
            )
    for name, q in cfg.quant.items():
        where = f"config.quant.{name}"
        if name not in names:
            raise ConfigError(f"{where}: layer '{name}' does not exist")
        if q.kind not in QUANT_KINDS:
            raise ConfigError(f"{where}.kind: unknown quantizer {q.kind!r}")
        if q.kind == "float":
            continue
        for attr in ("vec_len", "b_index", "b_scalar", "lq_bits"):
            if getattr(q, attr) < 1:
                raise ConfigError(f"{where}.{attr}: must be >= 1")
        if q.vq_kind not in ("havq", "projvq"):
            raise ConfigError(f"{where}.vq_kind: must be 'havq' or 'projvq'")
        layer = cfg.layers[names.index(name)]
        n_vectors = -(-(layer.in_dim * layer.out_dim) // q.vec_len)
        if q.kind in ("projvq", "havq", "mixed") and 2**q.b_index > n_vectors:
            raise ConfigError(
                f"{where}.b_index: 2^{q.b_index} codewords exceeds the {n_vectors} vectors of layer '{name}'"
            )
    d = cfg.data
    if d.kind not in ("synthetic", "idx"):
        raise ConfigError(f"config.data.kind: unknown dataset kind {d.kind!r}")
    if d.kind == "synthetic":
        if d.n_train < 1 or d.n_eval < 1 or d.classes < 1:
            raise ConfigError("config.data: n_train, n_eval, classes must be >= 1")
        if cfg.layers[0].in_dim != d.dim:
            raise ConfigError(f"config.data.dim: {d.dim} does not match first layer in_dim {cfg.layers[0].in_dim}")
        if cfg.layers[-1].out_dim != d.classes:
            raise ConfigError(f"config.data.classes: {d.classes} does not match last layer out_dim")
    else:
        for attr in ("train_images", "train_labels"):
            if not getattr(d, attr):
                raise ConfigError(f"config.data.{attr}: required for idx datasets")
    o = cfg.optim
    if o.lr <= 0 or o.epochs < 1 or o.batch_size < 1:
        raise ConfigError("config.optim: lr > 0, epochs >= 1, batch_size >= 1 required")
    if not 0 <= o.momentum < 1 or o.weight_decay < 0:
        raise ConfigError("config.optim: momentum in [0, 1) and weight_decay >= 0 required")
    n = cfg.nas
    mixed = [k for k, q in cfg.quant.items() if q.kind == "mixed"]
    if n.enabled:
        if not mixed:
            raise ConfigError("config.nas.enabled: no layer has kind 'mixed'")
        if n.beta < 0:
            raise ConfigError("config.nas.beta: must be >= 0")
        if n.budget is not None and n.budget <= 0:
            raise ConfigError("config.nas.budget: must be > 0")
    elif mixed:
        raise ConfigError(f"config.quant.{mixed[0]}: 'mixed' layers require nas.enabled")
    if cfg.seed < 0 or cfg.seed >= 2**64:
        raise ConfigError("config.seed: must be an unsigned 64-bit integer")
    return cfg
