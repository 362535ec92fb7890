import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from vqqat import kernels
from vqqat.numerics import make_rng

try:
    fast = kernels.get_backend("cython")
except ImportError:
    fast = None
slow = kernels.get_backend("python")

needs_ext = pytest.mark.skipif(fast is None, reason="compiled extension not built")


def test_backend_name():
    assert kernels.BACKEND in ("cython", "python")


@needs_ext
@given(st.integers(0, 2**32), st.integers(1, 40), st.integers(1, 9), st.integers(1, 12))
def test_backends_bit_identical(seed, n, d, k):
    rng = make_rng(seed)
    X = rng.standard_normal((n, d))
    C = rng.standard_normal((k, d))
    C[rng.integers(k)] = X[rng.integers(n)]  # exact hit, zero distance
    i1, d1 = fast.sq_dist_argmin(X, C)
    i2, d2 = slow.sq_dist_argmin(X, C)
    assert np.array_equal(i1, i2) and np.array_equal(d1, d2)
    assert np.array_equal(fast.cosine_scores(X, C), slow.cosine_scores(X, C))
    labels = rng.integers(0, k, n).astype(np.intp)
    s1, c1 = fast.centroid_sums(X, labels, k)
    s2, c2 = slow.centroid_sums(X, labels, k)
    assert np.array_equal(s1, s2) and np.array_equal(c1, c2)
    assert np.array_equal(fast.row_norms(C), slow.row_norms(C))
    assert fast.dot_lr(X[0], C[0]) == slow.dot_lr(X[0], C[0])
    o1, o2 = np.zeros((k, d)), np.zeros((k, d))
    fast.scatter_add_rows(o1, labels, X)
    slow.scatter_add_rows(o2, labels, X)
    assert np.array_equal(o1, o2)


def test_sq_dist_ties_pick_lowest():
    X = np.array([[0.0, 0.0]])
    C = np.array([[1.0, 0.0], [0.0, 1.0], [-1.0, 0.0]])
    idx, dist = kernels.sq_dist_argmin(X, C)
    assert idx[0] == 0 and dist[0] == 1.0


def test_pure_python_env_switch():
    import subprocess
    import sys

    out = subprocess.run([sys.executable, "-c", "import vqqat.kernels as k; print(k.BACKEND)"],
                         env={"VQQAT_PURE_PYTHON": "1", "PATH": ""}, capture_output=True, text=True)
    assert out.stdout.strip() == "python"
