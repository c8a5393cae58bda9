"""Compare the compiled and numpy kernel backends.

Usage::

    python benchmarks/bench_kernels.py [--repeat 5]

Prints best-of-``repeat`` wall time per kernel and backend, the speedup,
and whether the two backends returned bitwise-identical arrays.
"""
import argparse
import time

import numpy as np

from cgp import kernels


def _best(fn, repeat):
    best, out = float("inf"), None
    for _ in range(repeat):
        t0 = time.perf_counter()
        out = fn()
        best = min(best, time.perf_counter() - t0)
    return best, out


def _same(a, b):
    if isinstance(a, tuple):
        return all(_same(x, y) for x, y in zip(a, b))
    return a.shape == b.shape and a.tobytes() == b.tobytes()


def cases(rng):
    d, n_rec = 3, 40
    C = rng.random((n_rec, d))
    ucb = 0.8 + 0.2 * rng.random(n_rec)
    X = rng.random((100_000, d))
    yield ("envelope_terms 100k x 40 x 3",
           lambda b: kernels.envelope_terms(X, C, ucb, 1.0, backend=b))
    nc, ns, tries = 256, 20, 32
    env = kernels.envelope_terms(C, C, ucb, 1.0, backend="python")[0]
    level = float(np.quantile(env, 0.5))
    starts = C[env >= level][:1].repeat(nc, axis=0)
    dirs = rng.standard_normal((nc, ns, d))
    dirs /= np.linalg.norm(dirs, axis=2, keepdims=True)
    draws = rng.random((nc, ns, tries))
    lo, hi = np.zeros(d), np.ones(d)
    yield (f"hit_and_run_chains {nc} chains x {ns} steps",
           lambda b: kernels.hit_and_run_chains(starts, dirs, draws, C, ucb, 1.0, level,
                                                lo, hi, backend=b))


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()
    try:
        from cgp import _kernels  # noqa: F401
    except ImportError:
        print("compiled backend not built; only the numpy backend is available")
        return
    rng = np.random.default_rng(args.seed)
    print(f"{'kernel':<40} {'cython s':>10} {'numpy s':>10} {'speedup':>8}  identical")
    for name, fn in cases(rng):
        tc, oc = _best(lambda: fn("cython"), args.repeat)
        tp, op = _best(lambda: fn("python"), args.repeat)
        print(f"{name:<40} {tc:>10.4f} {tp:>10.4f} {tp / tc:>7.1f}x  {_same(oc, op)}")


if __name__ == "__main__":
    main()
