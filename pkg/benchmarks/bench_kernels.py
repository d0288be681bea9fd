"""Time the compiled kernels against the NumPy fallback.

    python3 benchmarks/bench_kernels.py [--repeat 5]
"""
import argparse
import timeit

import numpy as np

from virtisac import kernels


def cases(rng):
    freqs = 3e9 + 12.5e6 * np.arange(256)
    vals = rng.standard_normal(256) + 1j * rng.standard_normal(256)
    ranges = np.linspace(0, 50, 4096)
    times = np.arange(256) * 1e-4
    delays = np.linspace(0, 2e-7, 256)
    vels = np.linspace(-30, 30, 128)
    xs = np.linspace(-20, 20, 400)
    ys = np.linspace(-20, 20, 400)
    axis = np.linspace(0, 40, 2000)
    ll = -0.5 * ((axis - 12.0) / 0.1) ** 2
    return {
        "range_matched_filter": lambda: kernels.range_matched_filter(freqs, vals, ranges),
        "delay_velocity_matched_filter":
            lambda: kernels.delay_velocity_matched_filter(freqs, times, vals, delays, vels),
        "range_loglik_on_grid":
            lambda: kernels.range_loglik_on_grid(xs, ys, (0, 0), (5, 0), axis, ll),
    }


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args()
    backends = kernels.available_backends()
    if "cython" not in backends:
        print("compiled extension not built; timing the NumPy fallback only")
    funcs = cases(np.random.default_rng(0))
    print(f"{'kernel':32s}" + "".join(f"{b:>12s}" for b in backends) + "     speedup")
    for name, fn in funcs.items():
        t = {}
        for b in backends:
            kernels.use_backend(b)
            fn()
            t[b] = min(timeit.repeat(fn, number=1, repeat=args.repeat))
        speed = f"{t['python'] / t['cython']:10.1f}x" if "cython" in t else ""
        print(f"{name:32s}" + "".join(f"{t[b] * 1e3:10.2f}ms" for b in backends) + speed)


if __name__ == "__main__":
    main()
