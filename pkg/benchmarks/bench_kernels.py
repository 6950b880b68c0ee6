"""Timing comparison of the compiled kernels against the numpy fallback.

Run with `python3 benchmarks/bench_kernels.py`.  The same functions are
what training spends its elementwise time in; matrix products go through
BLAS on both paths and are not benchmarked here.
"""

import time

import numpy as np

from bigraphdiff import kernels

if not kernels.USE_NUMBA:
    raise SystemExit("unset BIGRAPHDIFF_DISABLE_NUMBA to compare both paths")


def best_of(fn, repeats=7):
    times = []
    for _ in range(repeats):
        start = time.perf_counter()
        fn()
        times.append(time.perf_counter() - start)
    return min(times)


def main():
    rng = np.random.default_rng(0)
    print(f"{'kernel':<16}{'size':>10}{'numba ms':>12}{'numpy ms':>12}{'speedup':>10}")
    for size in (1_000, 100_000, 1_000_000):
        x = rng.standard_normal(size)
        g = rng.standard_normal(size)
        p = rng.standard_normal(size)
        m = np.zeros(size)
        v = np.zeros(size)

        cases = [
            ("gelu_forward", lambda: kernels.gelu_forward(x),
             lambda: kernels._gelu_forward_np(x)),
            ("gelu_backward", lambda: kernels.gelu_backward(x, g),
             lambda: kernels._gelu_backward_np(x, g)),
            ("adam_update",
             lambda: kernels.adam_update(p, g, m, v, 1e-3, 0.9, 0.999, 1e-8, 1),
             lambda: kernels._adam_update_np(p, g, m, v, 1e-3, 0.9, 0.999, 1e-8, 1)),
        ]
        for name, fast, slow in cases:
            fast()  # warm up (jit compile on first call)
            t_fast = best_of(fast)
            t_slow = best_of(slow)
            print(f"{name:<16}{size:>10}{t_fast * 1e3:>12.3f}"
                  f"{t_slow * 1e3:>12.3f}{t_slow / t_fast:>10.1f}x")


if __name__ == "__main__":
    main()
