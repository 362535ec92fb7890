import json
import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import array_shapes, arrays

from oracles import brute_nearest, naive_lloyd
from vqqat.codebook import (
    COSINE,
    L2,
    NORM_FLOOR,
    Codebook,
    apply_norm_floor,
    assign,
    assign_many,
    group,
    init_codebook,
    regroup,
    utilization,
)
from vqqat.errors import ConfigError
from vqqat.numerics import kmeans_pp_init, make_rng


def test_group_examples():
    gw = group([1, 2, 3, 4], 2)
    assert gw.vectors.tolist() == [[1, 2], [3, 4]] and gw.pad_count == 0
    gw = group([1, 2, 3], 2)
    assert gw.vectors.tolist() == [[1, 2], [3, 0]] and gw.pad_count == 1
    w = make_rng(0).standard_normal((4, 6))
    gw = group(w, 8)
    assert gw.n_vectors == 3
    assert np.array_equal(regroup(gw), w)
    with pytest.raises(ConfigError):
        group(w, 0)


@given(arrays(np.float64, array_shapes(min_dims=1, max_dims=3, max_side=7),
              elements=st.floats(-1e3, 1e3, allow_nan=False)),
       st.integers(1, 10))
def test_group_regroup_round_trip(w, L):
    gw = group(w, L)
    assert gw.n_vectors * L == w.size + gw.pad_count and 0 <= gw.pad_count < L
    assert np.array_equal(regroup(gw), w)
    assert np.all(gw.flat[w.size:] == 0)


def test_assign_examples():
    for metric in (L2, COSINE):
        cb = Codebook(np.array([[1.0, 0.0], [0.0, 1.0]]), 1, metric)
        assert assign(cb, [0.9, 0.1]) == 0
    cb = np.array([[2.0, 0.0], [0.0, 1.0]])
    assert assign(Codebook(cb, 1, L2), [0.1, 0.2]) == 1
    assert assign(Codebook(cb, 1, COSINE), [0.1, 0.2]) == 1


def test_assign_zero_vector_cosine_is_index_zero():
    cb = Codebook(make_rng(1).standard_normal((4, 3)), 2, COSINE)
    assert assign(cb, [0.0, 0.0, 0.0]) == 0


def test_assign_dimension_mismatch():
    cb = Codebook(np.eye(2), 1, L2)
    with pytest.raises(ConfigError):
        assign(cb, [1.0, 2.0, 3.0])


def test_assign_l2_against_scan():
    rng = make_rng(2)
    C = rng.standard_normal((64, 4))
    W = rng.standard_normal((1000, 4))
    got = assign_many(Codebook(C, 6, L2), W)
    assert got.tolist() == [brute_nearest(C, w) for w in W]


@given(st.integers(0, 2**32), st.floats(1e-3, 1e3))
def test_cosine_assignment_is_scale_invariant_in_w(seed, alpha):
    rng = make_rng(seed)
    cb = Codebook(rng.standard_normal((8, 3)), 3, COSINE)
    w = rng.standard_normal(3)
    assert assign(cb, w) == assign(cb, alpha * w)


def test_codebook_validation():
    with pytest.raises(ConfigError):
        Codebook(np.zeros((3, 2)), 2, L2)
    with pytest.raises(ConfigError):
        Codebook(np.array([[np.nan, 0.0]]), 0, L2)
    with pytest.raises(ConfigError):
        Codebook(np.zeros((1, 2)), 0, "manhattan")


@given(st.integers(0, 2**32), st.integers(0, 4), st.integers(1, 5), st.sampled_from([L2, COSINE]))
def test_codebook_json_round_trip(seed, b, L, metric):
    cb = Codebook(make_rng(seed).standard_normal((2**b, L)), b, metric)
    back = Codebook.from_json(json.loads(json.dumps(cb.to_json())))
    assert np.array_equal(back.entries, cb.entries) and back.b_index == b and back.metric == metric


def test_norm_floor():
    cb = Codebook(np.array([[0.0, 0.0], [1e-10, 0.0], [3.0, 4.0], [1.0, 0.0]]), 2, COSINE)
    apply_norm_floor(cb)
    norms = np.linalg.norm(cb.entries, axis=1)
    assert norms[0] == pytest.approx(NORM_FLOOR) and norms[1] == pytest.approx(NORM_FLOOR)
    assert cb.entries[2].tolist() == [3.0, 4.0]


def test_init_codebook_square_corners():
    corners = np.array([[0.0, 0.0], [0.0, 1.0], [1.0, 0.0], [1.0, 1.0]])
    cb = init_codebook(group(corners, 2), 2, L2, make_rng(0))
    assert sorted(map(tuple, cb.entries.tolist())) == sorted(map(tuple, corners.tolist()))


def test_init_codebook_single_entry_is_mean():
    X = make_rng(3).standard_normal((20, 3))
    cb = init_codebook(group(X, 3), 0, L2, make_rng(4))
    np.testing.assert_allclose(cb.entries[0], X.mean(axis=0), rtol=1e-12, atol=1e-15)


def test_init_codebook_too_many_codewords():
    with pytest.raises(ConfigError):
        init_codebook(group(np.zeros(8), 2), 3, L2, make_rng(0))


def test_init_codebook_vs_naive_oracle():
    X = make_rng(5).standard_normal((512, 2))
    cb = init_codebook(group(X, 2), 4, L2, make_rng(6))
    ours = float(((X - cb.entries[assign_many(cb, X)]) ** 2).sum(axis=1).mean())
    _, ref = naive_lloyd(X, kmeans_pp_init(X, 16, make_rng(6)))
    assert ours <= ref * 1.05


def test_init_codebook_cosine_replaces_zero_centroid():
    X = np.vstack([np.zeros((4, 2)), make_rng(7).standard_normal((4, 2)) + 5])
    cb = init_codebook(group(X, 2), 3, COSINE, make_rng(8))
    assert np.all(np.linalg.norm(cb.entries, axis=1) >= NORM_FLOOR)


def test_utilization_examples():
    X = np.tile([1.0, 2.0], (10, 1))
    cb = Codebook(np.array([[1.0, 2.0], [5.0, 5.0], [-1.0, 0.0], [0.0, -3.0]]), 2, L2)
    u = utilization(cb, group(X, 2))
    assert u.dead_count == 3 and u.entropy == 0.0
    C = make_rng(9).standard_normal((8, 3))
    u = utilization(Codebook(C, 3, L2), group(np.repeat(C, 5, axis=0), 3))
    assert u.dead_count == 0 and u.entropy == pytest.approx(math.log(8), rel=1e-12)
