import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from oracles import exact_dot, exact_sum, linear_scan_argmax, naive_lloyd
from vqqat.errors import ConfigError
from vqqat.numerics import argmax_tiebreak_low, dot, kmeans, kmeans_pp_init, l2_norm, make_rng, softmax

finite = st.floats(-1e6, 1e6, allow_nan=False, allow_infinity=False)


def test_l2_norm_examples():
    assert l2_norm([3, 4]) == 5.0
    assert l2_norm([0, 0, 0]) == 0.0


def test_l2_norm_against_exact_sum():
    v = make_rng(1).standard_normal(8)
    ref = math.sqrt(exact_sum(x * x for x in v))
    assert l2_norm(v) == pytest.approx(ref, rel=1e-12)


def test_dot_examples():
    assert dot([1, 0], [0, 1]) == 0.0
    assert dot([1, 2], [3, 4]) == 11.0
    with pytest.raises(ConfigError):
        dot([1, 2], [1, 2, 3])


def test_dot_against_exact():
    rng = make_rng(2)
    a, b = rng.standard_normal(16), rng.standard_normal(16)
    assert dot(a, b) == pytest.approx(exact_dot(a, b), rel=1e-12)


def test_softmax_examples():
    assert softmax([0, 0]).tolist() == [0.5, 0.5]
    p = softmax([1000.0, 0.0])
    assert np.all(np.isfinite(p)) and p[0] == pytest.approx(1.0) and p[1] < 1e-300
    e = [math.exp(x) for x in (1, 2, 3)]
    np.testing.assert_allclose(softmax([1, 2, 3]), [x / sum(e) for x in e], rtol=1e-12)


@given(arrays(np.float64, st.integers(1, 20), elements=finite))
def test_softmax_is_a_distribution(s):
    p = softmax(s)
    assert np.all(p >= 0) and abs(p.sum() - 1) < 1e-12
    assert argmax_tiebreak_low(p) == argmax_tiebreak_low(s) or p[argmax_tiebreak_low(s)] == p.max()


@given(arrays(np.float64, st.integers(1, 20), elements=finite), st.floats(-100, 100))
def test_softmax_shift_invariant(s, c):
    np.testing.assert_allclose(softmax(s + c), softmax(s), atol=1e-12)


def test_argmax_examples():
    assert argmax_tiebreak_low([1, 3, 2]) == 1
    assert argmax_tiebreak_low([5, 5]) == 0
    with pytest.raises(ConfigError):
        argmax_tiebreak_low([])
    v = make_rng(3).standard_normal(100)
    assert argmax_tiebreak_low(v) == linear_scan_argmax(v)


@given(st.lists(st.integers(-3, 3), min_size=1, max_size=30))
def test_argmax_matches_scan_with_ties(v):
    assert argmax_tiebreak_low(v) == linear_scan_argmax(v)


def test_make_rng_substreams_are_reproducible_and_distinct():
    assert make_rng(7, 1, 2).random() == make_rng(7, 1, 2).random()
    assert make_rng(7, 1, 2).random() != make_rng(7, 2, 1).random()


def test_kmeans_two_clusters():
    pts = np.array([[0, 0], [0, 1], [10, 10], [10, 11]], dtype=float)
    res = kmeans(pts, 2, make_rng(0))
    got = sorted(map(tuple, res.centroids.tolist()))
    assert got == [(0.0, 0.5), (10.0, 10.5)]


def test_kmeans_k_equals_n():
    pts = make_rng(4).standard_normal((7, 3))
    res = kmeans(pts, 7, make_rng(1))
    assert res.distortions[-1] == 0.0
    assert sorted(map(tuple, res.centroids.tolist())) == sorted(map(tuple, pts.tolist()))


def test_kmeans_errors():
    with pytest.raises(ConfigError):
        kmeans(np.zeros((3, 2)), 4, make_rng(0))
    with pytest.raises(ConfigError):
        kmeans(np.zeros((3, 2)), 0, make_rng(0))


def test_kmeans_vs_random_restarts_of_naive_oracle():
    pts = make_rng(5).standard_normal((200, 2))
    ours = kmeans(pts, 4, make_rng(6)).distortions[-1]
    rng = make_rng(7)
    best = min(naive_lloyd(pts, pts[rng.choice(200, 4, replace=False)])[1] for _ in range(50))
    assert ours <= best * 1.05


@given(st.integers(0, 2**32), st.integers(1, 6))
def test_kmeans_distortion_never_increases(seed, k):
    rng = make_rng(seed)
    pts = rng.standard_normal((40, 2)) * rng.lognormal(0, 1, (40, 1))
    d = kmeans(pts, k, rng).distortions
    assert all(b <= a for a, b in zip(d, d[1:]))


def test_kmeans_pp_first_center_and_no_duplicates():
    pts = make_rng(8).standard_normal((30, 2))
    C = kmeans_pp_init(pts, 30, make_rng(9))
    assert len({tuple(c) for c in C.tolist()}) == 30
