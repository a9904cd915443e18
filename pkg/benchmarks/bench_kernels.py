"""Benchmark the numba kernels against the pure-numpy reference.

Times the two denoisers and the two gain builders in both variants and
prints a small table with speedups. Run from the repository root:

    python3 benchmarks/bench_kernels.py [--size N] [--repeats R]

The numba variants are compiled (and warmed up) on first call; warm-up
time is excluded from the measurements.
"""
import argparse
import math
import time

import numpy as np

from isacpix import backend, kernels
from isacpix.gamp import ScatterPrior
from isacpix.scene import QPSK


def _time(fn, args, repeats):
    fn(*args)  # warm-up / JIT compile
    best = math.inf
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn(*args)
        best = min(best, time.perf_counter() - t0)
    return best


def main():
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--size", type=int, default=20000,
                        help="denoiser input length (default 20000)")
    parser.add_argument("--grid", type=int, default=40,
                        help="pixels per side for the gain builders")
    parser.add_argument("--repeats", type=int, default=5,
                        help="timing repetitions, best-of (default 5)")
    args = parser.parse_args()

    if not backend.USE_NUMBA:
        parser.error("numba backend unavailable (ISACPIX_NO_NUMBA set or "
                     "numba not installed); nothing to compare")

    rng = np.random.default_rng(0)
    n = args.size
    r_c = rng.normal(size=n) + 1j * rng.normal(size=n)
    r_x = rng.uniform(-1.0, 2.0, size=n)
    tau = 10.0 ** rng.uniform(-6, 1, size=n)
    omega = np.full(4, 0.25)
    sigma4 = np.full(4, 0.05)
    sct = ScatterPrior(gamma=0.15, theta=1.0, sigma=0.2)

    g = args.grid
    pix = rng.uniform(0, 9, size=(g * g // 4, 2))
    sens = rng.uniform(0, 9, size=(g * g, 2))
    bs = 20.0 + rng.uniform(0, 5, size=(30, 2))

    cases = [
        ("symbol denoiser", kernels.symbol_moments_nb,
         kernels.symbol_moments_np,
         (r_c, tau, 0.3, omega, QPSK.copy(), sigma4)),
        ("scatter denoiser", kernels.scatter_moments_nb,
         kernels.scatter_moments_np,
         (r_x, tau, sct.gamma, sct.theta, sct.sigma, sct.lam)),
        ("vehicle gains", kernels.build_vehicle_gains_nb,
         kernels.build_vehicle_gains_np, (pix, bs, 0.01, 1.0)),
        ("sensing gains", kernels.build_sensing_gains_nb,
         kernels.build_sensing_gains_np, (sens, pix, bs, 0.01)),
    ]

    print(f"{'kernel':<18} {'numba':>12} {'numpy':>12} {'speedup':>9}")
    for name, fn_nb, fn_np, inputs in cases:
        t_nb = _time(fn_nb, inputs, args.repeats)
        t_np = _time(fn_np, inputs, args.repeats)
        print(f"{name:<18} {t_nb * 1e3:>10.3f}ms {t_np * 1e3:>10.3f}ms "
              f"{t_np / t_nb:>8.2f}x")


if __name__ == "__main__":
    main()
