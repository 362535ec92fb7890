"""Datasets: IDX files and seeded synthetic generators."""
import struct
from dataclasses import dataclass, field

import numpy as np

from vqqat.errors import ConfigError, IDXParseError

IDX_IMAGES_MAGIC = 0x00000803
IDX_LABELS_MAGIC = 0x00000801


@dataclass
class Dataset:
    features: np.ndarray
    labels: np.ndarray
    num_classes: int
    source: dict = field(default_factory=dict)

    def __post_init__(self):
        self.features = np.asarray(self.features, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.features.shape[0] != self.labels.shape[0]:
            raise ConfigError("features and labels disagree on the number of samples")
        if self.labels.size and (self.labels.min() < 0 or self.labels.max() >= self.num_classes):
            raise ConfigError("labels out of range for num_classes")
        if not np.all(np.isfinite(self.features)):
            raise ConfigError("features contain non-finite values")

    def __len__(self):
        return self.labels.shape[0]

    @property
    def dim(self):
        return self.features.shape[1]


def _read_idx(path, magic, ndim):
    with open(path, "rb") as f:
        raw = f.read()
    header = 4 + 4 * ndim
    if len(raw) < header:
        raise IDXParseError(f"{path}: truncated header")
    found = struct.unpack(">I", raw[:4])[0]
    if found != magic:
        raise IDXParseError(f"{path}: wrong magic 0x{found:08x}, expected 0x{magic:08x}")
    dims = struct.unpack(f">{ndim}I", raw[4:header])
    n_bytes = int(np.prod(dims))
    if len(raw) - header < n_bytes:
        raise IDXParseError(f"{path}: truncated data ({len(raw) - header} of {n_bytes} bytes)")
    data = np.frombuffer(raw, dtype=np.uint8, count=n_bytes, offset=header)
    return data.reshape(dims)


def read_idx_images(path):
    return _read_idx(path, IDX_IMAGES_MAGIC, 3)


def read_idx_labels(path):
    return _read_idx(path, IDX_LABELS_MAGIC, 1)


def write_idx_images(path, images):
    images = np.asarray(images, dtype=np.uint8)
    with open(path, "wb") as f:
        f.write(struct.pack(">4I", IDX_IMAGES_MAGIC, *images.shape))
        f.write(images.tobytes())


def write_idx_labels(path, labels):
    labels = np.asarray(labels, dtype=np.uint8)
    with open(path, "wb") as f:
        f.write(struct.pack(">2I", IDX_LABELS_MAGIC, labels.shape[0]))
        f.write(labels.tobytes())


def load_idx(images_path, labels_path, num_classes=None):
    images = read_idx_images(images_path)
    labels = read_idx_labels(labels_path)
    if images.shape[0] != labels.shape[0]:
        raise IDXParseError(
            f"count mismatch: {images.shape[0]} images vs {labels.shape[0]} labels"
        )
    features = images.reshape(images.shape[0], -1).astype(np.float64) / 255.0
    if num_classes is None:
        num_classes = int(labels.max()) + 1 if labels.size else 1
    return Dataset(features, labels.astype(np.int64), num_classes,
                   {"kind": "idx", "images": str(images_path), "labels": str(labels_path)})


@dataclass
class SyntheticSpec:
    n: int
    d: int
    classes: int
    separation: float = 3.0
    direction_uniform: bool = True
    magnitude_lognormal: tuple = (0.0, 1.0)

    def __post_init__(self):
        if self.n < 1 or self.d < 1 or self.classes < 1:
            raise ConfigError("synthetic dataset needs n, d, classes >= 1")


def make_synthetic(spec, rng, means=None):
    """Class-conditional unit-variance Gaussian blobs.

    Class means are drawn once from N(0, separation^2 I) unless passed in,
    so train and eval splits can share them.
    """
    if means is None:
        means = class_means(spec, rng)
    labels = np.arange(spec.n) % spec.classes
    labels = labels[rng.permutation(spec.n)]
    x = means[labels] + rng.standard_normal((spec.n, spec.d))
    return Dataset(x, labels, spec.classes, {"kind": "synthetic", "n": spec.n, "d": spec.d})


def class_means(spec, rng):
    return rng.standard_normal((spec.classes, spec.d)) * spec.separation


def make_weight_vectors(n, d, rng, magnitude_lognormal=(0.0, 1.0), direction_uniform=True):
    """Vectors with isotropic directions and log-normal lengths.

    With ``direction_uniform=False`` directions concentrate around the first
    axis, which is useful as a contrast case.
    """
    mu, sigma = magnitude_lognormal
    u = rng.standard_normal((n, d))
    if not direction_uniform:
        u[:, 0] = np.abs(u[:, 0]) + 3.0
    u /= np.linalg.norm(u, axis=1, keepdims=True)
    mags = rng.lognormal(mu, sigma, n) if sigma > 0 else np.full(n, np.exp(mu))
    return u * mags[:, None]
