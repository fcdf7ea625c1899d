"""Numba vs numpy timings for the two hot kernels.

    python3 benchmarks/bench_kernels.py [--repeat 3]

The first numba call compiles (or loads the on-disk cache); it is timed
separately as warm-up and excluded from the steady-state numbers.
"""

import argparse
import time

import numpy as np

from holocrit import _accel, _kernels
from holocrit.fieldsim import _tables, fs_uniform_starts, sample_section
from holocrit.wishart import tridiagonal_model


def newton_case(m, N, starts, seed=0):
    sample = sample_section(m, N, seed)
    E, tabs, _ = _tables(m, N)
    Z0 = fs_uniform_starts(np.random.default_rng(seed), starts, m)
    return lambda: _kernels.newton_solve(sample.poly_coeffs, E, tabs, N, Z0)


def conditional_case(M, draws, seed=0):
    d, e = tridiagonal_model(np.random.default_rng(seed), draws, M)
    a = (1.0 - 2.0 / 3.0) * M / 2.0
    return lambda: _kernels.conditional_top(d, e, 4.5, np.inf, a)


def best_of(fn, repeat):
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return min(times)


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=3)
    args = ap.parse_args()
    cases = [
        ("newton m=1 N=3, 500 starts", newton_case(1, 3, 500)),
        ("newton m=2 N=3, 500 starts", newton_case(2, 3, 500)),
        ("newton m=3 N=4, 500 starts", newton_case(3, 4, 500)),
        ("conditional M=51, 200 draws", conditional_case(51, 200)),
        ("conditional M=401, 100 draws", conditional_case(401, 100)),
    ]
    if not _accel.HAVE_NUMBA:
        print("numba not installed; numpy timings only")
    print(f"{'case':<32}{'numpy [s]':>12}{'numba [s]':>12}{'speedup':>10}")
    for name, fn in cases:
        _accel.set_backend("numpy")
        t_np = best_of(fn, args.repeat)
        t_nb = float("nan")
        if _accel.HAVE_NUMBA:
            _accel.set_backend("numba")
            fn()  # warm-up / compile
            t_nb = best_of(fn, args.repeat)
        print(f"{name:<32}{t_np:>12.4f}{t_nb:>12.4f}{t_np / t_nb:>10.1f}")


if __name__ == "__main__":
    main()
