"""Compare numpy and numba kernels, and time reduce as n doubles.

Usage: python3 benchmarks/bench_kernels.py [--repeat 5]
"""

import argparse
import timeit

import numpy as np

from daeflate import _kernels
from daeflate.deflate_lti import run_deflation
from daeflate.generators import known_index_pencil


def kernel_cases(rng):
    a, b = rng.normal(size=(4, 6, 6)), rng.normal(size=(4, 6, 6))
    m = rng.normal(size=(4, 6, 6))
    m[0] += 6 * np.eye(6)
    x0 = np.linalg.inv(m[0])
    E = rng.normal(size=(40, 20)) @ rng.normal(size=(20, 40))
    B = rng.normal(size=(8, 8)) / 8
    g = rng.normal(size=(2000, 3, 8))
    x = rng.normal(size=8)
    return {
        "jet_matmul (order 3, 6x6)": ("jet_matmul", (a, b)),
        "jet_inverse (order 3, 6x6)": ("jet_inverse", (m, x0)),
        "full_pivot_lu (40x40, rank 20)": ("full_pivot_lu", (E, 1e-10, 0.0)),
        "rk4_linear (2000 steps, n=8)": ("rk4_linear", (B, x, g, 1e-3)),
    }


def best(fn, args, repeat, number):
    return min(timeit.repeat(lambda: fn(*args), repeat=repeat, number=number)) / number


def main():
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--repeat", type=int, default=5)
    args = parser.parse_args()
    rng = np.random.default_rng(0)

    if _kernels.numba is None:
        print("numba is not installed; only numpy kernels are available")
        return
    _kernels.warmup()
    print(f"{'kernel':34s} {'numpy':>11s} {'numba':>11s} {'speedup':>8s}")
    for label, (name, kargs) in kernel_cases(rng).items():
        py = getattr(_kernels, f"py_{name}")
        nb = getattr(_kernels, f"nb_{name}")
        nb(*kargs)
        number = 20 if name == "rk4_linear" else 200
        tp = best(py, kargs, args.repeat, number)
        tn = best(nb, kargs, args.repeat, number)
        print(f"{label:34s} {tp * 1e6:9.1f}us {tn * 1e6:9.1f}us {tp / tn:7.1f}x")

    print()
    print(f"{'n':>4s} {'reduce':>10s} {'ratio':>6s}")
    prev = None
    for n in (16, 32, 64, 128):
        p = known_index_pencil(n - 4, [4], rng)
        t = best(lambda: run_deflation(p.E, p.A), (), args.repeat, 3)
        ratio = f"{t / prev:6.1f}" if prev else ""
        print(f"{n:4d} {t * 1e3:8.2f}ms {ratio}")
        prev = t


if __name__ == "__main__":
    main()
