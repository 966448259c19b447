"""Time the compiled and pure-numpy variants of every hot kernel.

    python benchmarks/bench_kernels.py [--repeat 5]

Both variants are imported directly, so the HRB_DISABLE_NUMBA flag does not
matter here. The first numba call (compilation) is excluded.
"""

import argparse
import time

import numpy as np

from hyperribbon import _kernels
from hyperribbon._backend import HAS_NUMBA


def _best(fn, repeat):
    best = float("inf")
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t0)
    return best


def cases(rng):
    n, N, T = 50, 256, 500
    x = np.sort(rng.uniform(1e-4, 1.0, n))
    q = 1.0 - x
    rho0 = rng.standard_normal((N, n))
    noise = rng.standard_normal((N, T - 1, n)) * 0.01
    field = rng.integers(0, 10, (60, 60)).astype(np.float64)
    return {
        "geometric_weights n=50 T=1e4": ("geometric_weights", (x, 10_000)),
        "geometric_sums n=50 T=1e4": ("geometric_sums", (x, 10_000)),
        f"evolve_gd N={N} T={T} n={n}": ("evolve_gd", (rho0, q, T)),
        f"evolve_sgd N={N} T={T} n={n}": ("evolve_sgd", (rho0, q, noise)),
        "march_segments 60x60": ("march_segments", (field, 4.5)),
    }


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args(argv)
    rng = np.random.default_rng(0)
    print(f"{'kernel':34s} {'numpy [ms]':>11s} {'numba [ms]':>11s} {'speedup':>8s}")
    for label, (name, call_args) in cases(rng).items():
        py = getattr(_kernels, f"{name}_numpy")
        t_py = _best(lambda: py(*call_args), args.repeat)
        if HAS_NUMBA:
            jit = getattr(_kernels, f"{name}_numba")
            ref = py(*call_args)
            got = jit(*call_args)
            assert np.allclose(ref, got, rtol=1e-12, atol=1e-12), label
            t_jit = _best(lambda: jit(*call_args), args.repeat)
            print(f"{label:34s} {1e3 * t_py:11.2f} {1e3 * t_jit:11.2f} {t_py / t_jit:8.1f}x")
        else:
            print(f"{label:34s} {1e3 * t_py:11.2f} {'n/a':>11s} {'':>8s}")


if __name__ == "__main__":
    main()
