"""Timing comparison of the numba kernels against their numpy fallbacks.

Run:  python3 benchmarks/bench_kernels.py
The active variant in the package is chosen at import time via the
MCFPROTO_NO_NUMBA environment variable; this script times both directly.
"""

import time

import numpy as np

from mcfproto import kernels


def bench(fn, *args, repeat=5, warmup=1):
    for _ in range(warmup):
        fn(*args)
    best = np.inf
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn(*args)
        best = min(best, time.perf_counter() - t0)
    return best


def main():
    rng = np.random.default_rng(0)

    A = rng.normal(size=(12, 12))
    A = 0.5 * (A + A.T)
    p6 = rng.normal(size=(100000, 6))
    X = rng.normal(size=(2000, 6))
    samples = rng.normal(size=(1000000, 3))
    R = np.linalg.qr(rng.normal(size=(3, 3)))[0]

    cases = [
        ("jacobi_eigh 12x12", kernels.jacobi_eigh_numba,
         kernels.jacobi_eigh_numpy, (A, 1e-12, 100)),
        ("decode6d_batch 1e5", kernels.decode6d_batch_numba,
         kernels.decode6d_batch_numpy, (p6,)),
        ("pairwise_mean 2000", kernels.pairwise_mean_distance_numba,
         kernels.pairwise_mean_distance_numpy, (X,)),
        ("mc_l1_objective 1e6", kernels.mc_l1_objective_numba,
         kernels.mc_l1_objective_numpy, (R, samples)),
    ]

    print(f"{'kernel':<22} {'numba':>10} {'numpy':>10} {'speedup':>8}")
    for name, f_nb, f_np, args in cases:
        t_nb = bench(f_nb, *args)
        t_np = bench(f_np, *args)
        print(f"{name:<22} {t_nb * 1e3:>8.2f}ms {t_np * 1e3:>8.2f}ms "
              f"{t_np / t_nb:>7.1f}x")


if __name__ == "__main__":
    main()
