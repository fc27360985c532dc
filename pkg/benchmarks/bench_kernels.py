"""Time the compiled kernels against the NumPy fallback.

    python3 benchmarks/bench_kernels.py [--repeat 5] [--steps 20000]
"""
import argparse
import timeit

import numpy as np

from hierflow import _fallback, kernels
from hierflow.solvers import dd_assemble, monolithic_solve, power_sequence


def flow_args(steps, n=5, seed=0):
    g = np.random.default_rng(seed)
    B = g.standard_normal((n, n))
    A = g.standard_normal((2, n))
    h = 0.01
    wb = (1.0 + h * np.arange(1, steps + 1)) ** 2
    return (B @ B.T + np.eye(n), g.standard_normal(n), A.T @ A, g.standard_normal(n),
            np.ones(steps), wb, np.zeros(n), h, 1.0)


def dd_args(levels, n=101, split=50):
    cp = dd_assemble(n, split, lambda x: 1.0)
    r1, r2 = cp.split_vector(monolithic_solve(n, cp.source))
    bands = [np.ascontiguousarray(v) for v in (*cp.band1, *cp.band2)]
    return (*bands, cp.h1, cp.h2, split - 1, 0, 1.0, power_sequence(levels),
            np.zeros(split), np.zeros(n - split), r1, r2)


def best_of(fn, args, repeat):
    return min(timeit.repeat(lambda: fn(*args), number=1, repeat=repeat))


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--steps", type=int, default=20000)
    ap.add_argument("--levels", type=int, default=20000)
    args = ap.parse_args()
    if kernels.BACKEND != "compiled":
        print("compiled extension not built; only the fallback is timed")
    cases = [("linear_implicit_flow", "linear_implicit_flow", flow_args(args.steps)),
             ("dd_iterate", "dd_iterate", dd_args(args.levels))]
    print(f"{'kernel':<22}{'fallback [s]':>14}{'compiled [s]':>14}{'speedup':>10}")
    for label, name, fargs in cases:
        slow = best_of(getattr(_fallback, name), fargs, args.repeat)
        if kernels.BACKEND == "compiled":
            fast = best_of(getattr(kernels, name), fargs, args.repeat)
            print(f"{label:<22}{slow:>14.4f}{fast:>14.4f}{slow / fast:>10.1f}")
        else:
            print(f"{label:<22}{slow:>14.4f}{'-':>14}{'-':>10}")


if __name__ == "__main__":
    main()
