"""Time the compiled kernels against the numpy fallback on k-means-sized inputs.

    python benchmarks/bench_kernels.py [--repeat 5]

Also confirms the two backends agree bit for bit on every input timed.
"""
import argparse
import timeit

import numpy as np

from vqqat.kernels import get_backend

SHAPES = [(1024, 8, 16), (4096, 8, 256), (16384, 16, 256)]


def _cases(rng):
    for n, d, k in SHAPES:
        X = rng.standard_normal((n, d))
        C = rng.standard_normal((k, d))
        labels = rng.integers(0, k, n).astype(np.intp)
        yield (n, d, k), {
            "sq_dist_argmin": (X, C),
            "cosine_scores": (X, C),
            "centroid_sums": (X, labels, k),
            "row_norms": (C,),
        }


def _same(a, b):
    if isinstance(a, tuple):
        return all(_same(x, y) for x, y in zip(a, b))
    return np.array_equal(a, b)


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args(argv)
    try:
        fast = get_backend("cython")
    except ImportError:
        print("compiled extension not built; run `pip install -e . --no-build-isolation` first")
        return 1
    slow = get_backend("python")
    rng = np.random.default_rng(0)
    print(f"{'kernel':16s} {'n x d, k':>18s} {'cython ms':>10s} {'python ms':>10s} {'speedup':>8s}  identical")
    for (n, d, k), calls in _cases(rng):
        for name, call_args in calls.items():
            f, g = getattr(fast, name), getattr(slow, name)
            same = _same(f(*call_args), g(*call_args))
            tf = min(timeit.repeat(lambda: f(*call_args), number=1, repeat=args.repeat)) * 1e3
            tp = min(timeit.repeat(lambda: g(*call_args), number=1, repeat=args.repeat)) * 1e3
            print(f"{name:16s} {f'{n}x{d}, {k}':>18s} {tf:10.2f} {tp:10.2f} {tp / tf:7.1f}x  {same}")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
