"""Kernel backend selection.

The compiled Cython module is used when it was built; otherwise the numpy
fallback is loaded. Setting ``VQQAT_PURE_PYTHON=1`` forces the fallback.
Both backends produce bit-identical results.
"""
import os

import numpy as np

from vqqat import _kernels_py

if os.environ.get("VQQAT_PURE_PYTHON", "") not in ("", "0"):
    _impl = _kernels_py
else:
    try:
        from vqqat import _kernels as _impl
    except ImportError:
        _impl = _kernels_py

BACKEND = _impl.BACKEND


def _mat(a):
    return np.ascontiguousarray(a, dtype=np.float64)


def dot_lr(a, b):
    return _impl.dot_lr(_mat(a), _mat(b))


def row_norms(C):
    return _impl.row_norms(_mat(C))


def sq_dist_argmin(X, C):
    return _impl.sq_dist_argmin(_mat(X), _mat(C))


def cosine_scores(X, C):
    return _impl.cosine_scores(_mat(X), _mat(C))


def centroid_sums(X, labels, k):
    return _impl.centroid_sums(_mat(X), np.ascontiguousarray(labels, dtype=np.intp), int(k))


def scatter_add_rows(out, idx, vals):
    if not (out.flags.c_contiguous and out.dtype == np.float64):
        raise ValueError("scatter_add_rows needs a C-contiguous float64 output")
    _impl.scatter_add_rows(out, np.ascontiguousarray(idx, dtype=np.intp), _mat(vals))
    return out


def get_backend(name):
    """Return the module for ``name`` ("cython" or "python"); used by benchmarks and tests."""
    if name == "python":
        return _kernels_py
    from vqqat import _kernels

    return _kernels
