"""Compare the compiled kernels against the numpy fallback.

    python benchmarks/bench_kernels.py [--repeat 2000]

Prints microseconds per call for the RLS rank-one update (10 targets)
and for kernel-product evaluation of one feature vector.
"""

import argparse
import timeit

import numpy as np

from dualmem import _kernels_py

try:
    from dualmem import _kernels as compiled
except ImportError:  # extension not built
    compiled = None


def rls_case(d: int, rng: np.random.Generator):
    A = rng.standard_normal((d, d))
    P = np.linalg.inv(np.eye(d) + A @ A.T / d)
    P = 0.5 * (P + P.T)
    B = rng.standard_normal((d, 10))
    phi = np.maximum(rng.standard_normal(d), 0)  # rectified features: about half zero
    return P, B, P @ B, phi, np.eye(10)[3]


def time_rls(impl, d, repeat, rng):
    P, B, W, phi, y = rls_case(d, rng)
    return timeit.timeit(lambda: impl.rls_rank1_update(P, B, W, phi, y), number=repeat) / repeat * 1e6


def time_products(impl, m, repeat, rng):
    v = rng.random((1, 320))
    K = np.sort(rng.integers(0, 320, (m, 2)), axis=1).astype(np.intp)
    out = np.empty((1, m))
    return timeit.timeit(lambda: impl.eval_products(v, K, out), number=repeat) / repeat * 1e6


def main():
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--repeat", type=int, default=2000)
    args = parser.parse_args()
    rng = np.random.default_rng(0)
    impls = [("python", _kernels_py)] + ([("cython", compiled)] if compiled else [])
    if compiled is None:
        print("compiled extension not built; timing the fallback only")
    print(f"{'kernel':<22}{'size':>6}" + "".join(f"{name:>12}" for name, _ in impls) + f"{'speedup':>10}")
    for d in (50, 100, 200, 400):
        t = [time_rls(impl, d, args.repeat, rng) for _, impl in impls]
        speed = f"{t[0] / t[1]:>9.1f}x" if len(t) == 2 else ""
        print(f"{'rls_rank1_update':<22}{d:>6}" + "".join(f"{x:>10.1f}us" for x in t) + speed)
    for m in (50, 200, 800):
        t = [time_products(impl, m, args.repeat, rng) for _, impl in impls]
        speed = f"{t[0] / t[1]:>9.1f}x" if len(t) == 2 else ""
        print(f"{'eval_products':<22}{m:>6}" + "".join(f"{x:>10.1f}us" for x in t) + speed)


if __name__ == "__main__":
    main()
