import struct

import numpy as np
import pytest
from scipy import stats

from vqqat.data import (
    SyntheticSpec,
    load_idx,
    make_synthetic,
    make_weight_vectors,
    read_idx_images,
    read_idx_labels,
    write_idx_images,
    write_idx_labels,
)
from vqqat.errors import ConfigError, IDXParseError
from vqqat.numerics import make_rng


def hand_fixture(tmp_path):
    img = tmp_path / "img.idx"
    lab = tmp_path / "lab.idx"
    img.write_bytes(bytes([0, 0, 8, 3, 0, 0, 0, 2, 0, 0, 0, 2, 0, 0, 0, 2,
                           0, 1, 2, 3,
                           128, 254, 255, 0]))
    lab.write_bytes(bytes([0, 0, 8, 1, 0, 0, 0, 2, 1, 0]))
    return img, lab


def test_idx_hand_fixture(tmp_path):
    img, lab = hand_fixture(tmp_path)
    ds = load_idx(img, lab)
    assert ds.features.tolist() == [[0.0, 1 / 255, 2 / 255, 3 / 255], [128 / 255, 254 / 255, 1.0, 0.0]]
    assert ds.labels.tolist() == [1, 0] and ds.num_classes == 2


def test_idx_round_trip_bytes(tmp_path):
    rng = make_rng(0)
    images = rng.integers(0, 256, (5, 3, 4)).astype(np.uint8)
    labels = rng.integers(0, 10, 5).astype(np.uint8)
    write_idx_images(tmp_path / "i", images)
    write_idx_labels(tmp_path / "l", labels)
    assert np.array_equal(read_idx_images(tmp_path / "i"), images)
    assert np.array_equal(read_idx_labels(tmp_path / "l"), labels)
    raw = (tmp_path / "i").read_bytes()
    write_idx_images(tmp_path / "i2", read_idx_images(tmp_path / "i"))
    assert (tmp_path / "i2").read_bytes() == raw


def test_idx_errors(tmp_path):
    img, lab = hand_fixture(tmp_path)
    with pytest.raises(IDXParseError, match="wrong magic"):
        read_idx_labels(img)
    empty = tmp_path / "empty"
    empty.write_bytes(b"")
    with pytest.raises(IDXParseError, match="truncated header"):
        read_idx_images(empty)
    short = tmp_path / "short"
    short.write_bytes(img.read_bytes()[:-1])
    with pytest.raises(IDXParseError, match="truncated data"):
        read_idx_images(short)
    three = tmp_path / "three"
    three.write_bytes(struct.pack(">2I", 0x801, 3) + bytes([0, 1, 0]))
    with pytest.raises(IDXParseError, match="count mismatch"):
        load_idx(img, three)


def test_synthetic_balanced_and_seeded():
    spec = SyntheticSpec(100, 5, 4)
    a = make_synthetic(spec, make_rng(1))
    b = make_synthetic(spec, make_rng(1))
    assert np.array_equal(a.features, b.features) and np.array_equal(a.labels, b.labels)
    assert np.bincount(a.labels).tolist() == [25] * 4
    with pytest.raises(ConfigError):
        SyntheticSpec(0, 2, 2)


def test_weight_vectors_sigma_zero_equal_norms():
    v = make_weight_vectors(1000, 4, make_rng(2), magnitude_lognormal=(0.3, 0.0))
    norms = np.linalg.norm(v, axis=1)
    np.testing.assert_allclose(norms, np.exp(0.3), rtol=1e-12)


def test_weight_vector_directions_uniform_chi2():
    v = make_weight_vectors(100_000, 2, make_rng(3))
    angles = np.arctan2(v[:, 1], v[:, 0])
    counts, _ = np.histogram(angles, bins=36, range=(-np.pi, np.pi))
    assert stats.chisquare(counts).pvalue > 0.01


def test_weight_vector_directions_nonuniform_fails_chi2():
    v = make_weight_vectors(100_000, 2, make_rng(4), direction_uniform=False)
    counts, _ = np.histogram(np.arctan2(v[:, 1], v[:, 0]), bins=36, range=(-np.pi, np.pi))
    assert stats.chisquare(counts).pvalue < 0.01
