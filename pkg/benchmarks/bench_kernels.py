"""Benchmark the compiled kernels against the numpy fallback.

Run with:  python3 benchmarks/bench_kernels.py [--sizes 162,642,2562]

For each kernel the compiled extension and the pure-numpy implementation
run on the same inputs; the script reports per-call times, the speedup,
and the largest numerical discrepancy between the two backends.
"""

import argparse
import time

import numpy as np

from sphere_euler.kernels import BACKEND, _fallback

try:
    from sphere_euler.kernels import _core
except ImportError:
    _core = None


def random_points(n, rng):
    p = rng.standard_normal((n, 3))
    return p / np.linalg.norm(p, axis=1, keepdims=True)


def timeit(fn, *args, repeats=5):
    best = np.inf
    out = None
    for _ in range(repeats):
        t0 = time.perf_counter()
        out = fn(*args)
        best = min(best, time.perf_counter() - t0)
    return best, out


def bench(n, rng):
    X = random_points(n, rng)
    Y = random_points(n, rng)
    C = _fallback.pairwise_half_dsq(X, Y)
    phi = rng.standard_normal(n) * 0.1
    M = -C / 1e-2

    cases = [
        ("pairwise_half_dsq", (X, Y)),
        ("pairwise_dist", (X, Y)),
        ("min_plus", (C, phi)),
        ("lse_rows", (M,)),
    ]
    print("n = %d" % n)
    for name, args in cases:
        t_fb, out_fb = timeit(getattr(_fallback, name), *args)
        if _core is None:
            print("  %-18s fallback %8.3f ms   (compiled core unavailable)"
                  % (name, 1e3 * t_fb))
            continue
        t_c, out_c = timeit(getattr(_core, name), *args)
        diff = np.max(np.abs(np.asarray(out_c) - np.asarray(out_fb)))
        print("  %-18s compiled %8.3f ms   fallback %8.3f ms   "
              "speedup %5.2fx   max diff %.2e"
              % (name, 1e3 * t_c, 1e3 * t_fb, t_fb / t_c, diff))


def main():
    parser = argparse.ArgumentParser()
    parser.add_argument("--sizes", default="162,642,2562",
                        help="comma-separated point counts")
    args = parser.parse_args()
    print("active backend: %s" % BACKEND)
    rng = np.random.default_rng(0)
    for n in (int(s) for s in args.sizes.split(",")):
        bench(n, rng)


if __name__ == "__main__":
    main()
