"""Time the compiled kernels against the numpy fallback on desk-sized inputs.

Usage::

    python benchmarks/bench_kernels.py [--repeat 5] [--n-bs 128] [--columns 2560]

Prints the best-of-``repeat`` wall time per call for each backend, the
speed-up, and the largest absolute difference between the two outputs.
"""

import argparse
import timeit

import numpy as np

from ilsc import kernels
from ilsc.channel import element_offsets


def steering_inputs(rng, n_bs: int, n_cols: int):
    sin_theta = rng.uniform(-1, 1, n_cols)
    inv_r = rng.uniform(0, 0.2, n_cols)
    return sin_theta, inv_r, element_offsets(n_bs, 0.0032), 0.0064


def denoise_inputs(rng, n_cols: int, n_ut: int):
    r = rng.standard_normal((n_cols, n_ut)) + 1j * rng.standard_normal((n_cols, n_ut))
    sigma = rng.uniform(0.01, 1.0, (n_cols, n_ut))
    lam = rng.uniform(0.0, 0.2, n_cols)
    mu = rng.standard_normal(n_ut) + 1j * rng.standard_normal(n_ut)
    gamma = rng.uniform(0.5, 2.0, n_ut)
    return r, sigma, lam, mu, gamma


def max_difference(a, b) -> float:
    if isinstance(a, tuple):
        return max(float(np.max(np.abs(x - y))) for x, y in zip(a, b))
    return float(np.max(np.abs(a - b)))


def best_time(fn, args, repeat: int) -> float:
    return min(timeit.repeat(lambda: fn(*args), number=1, repeat=repeat))


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--repeat", type=int, default=5, help="timing repetitions (best is kept)")
    parser.add_argument("--n-bs", type=int, default=128, help="BS antennas")
    parser.add_argument("--columns", type=int, default=2560, help="dictionary columns")
    parser.add_argument("--n-ut", type=int, default=16, help="UT antennas")
    parser.add_argument("--seed", type=int, default=0)
    args = parser.parse_args(argv)

    if kernels.compiled_backend is None:
        print("compiled backend unavailable (not built or ILSC_PURE_PYTHON set); "
              "only the numpy fallback can be timed")
    rng = np.random.default_rng(args.seed)
    cases = {
        "steering_matrix": steering_inputs(rng, args.n_bs, args.columns),
        "bg_denoise": denoise_inputs(rng, args.columns, args.n_ut),
    }
    print(f"{'kernel':<16} {'python [ms]':>12} {'cython [ms]':>12} {'speed-up':>9} {'max |diff|':>11}")
    for name, inputs in cases.items():
        py_fn = getattr(kernels.python_backend, name)
        t_py = best_time(py_fn, inputs, args.repeat)
        if kernels.compiled_backend is None:
            print(f"{name:<16} {1e3 * t_py:12.2f} {'-':>12} {'-':>9} {'-':>11}")
            continue
        cy_fn = getattr(kernels.compiled_backend, name)
        t_cy = best_time(cy_fn, inputs, args.repeat)
        diff = max_difference(py_fn(*inputs), cy_fn(*inputs))
        print(f"{name:<16} {1e3 * t_py:12.2f} {1e3 * t_cy:12.2f} {t_py / t_cy:9.2f} {diff:11.1e}")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
