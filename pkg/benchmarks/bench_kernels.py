"""Time the compiled kernels against their numpy fallbacks.

    python3 benchmarks/bench_kernels.py [--repeat N]

Inputs match the default front-end and back-end workloads: one 2 s
utterance through the default CQT, and one GMM E-step over 20k frames of
60-dim features with 32 components.
"""

import argparse
import time

import numpy as np

from antispoof import _pykernels
from antispoof.cqcc import build_cqt_spec

try:
    from antispoof import _kernels
except ImportError:
    _kernels = None


def best_of(fn, args, repeat):
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        out = fn(*args)
        times.append(time.perf_counter() - t0)
    return min(times), out


def cqt_case():
    spec = build_cqt_spec(16000)
    x = np.random.default_rng(0).standard_normal(32000)
    n0 = int(spec.window_lengths[0])
    centers = n0 // 2 + 160 * np.arange((len(x) - n0) // 160 + 1, dtype=np.int64)
    return (x, centers, *spec._kernels)


def gmm_case():
    rng = np.random.default_rng(1)
    x = rng.standard_normal((20000, 60))
    means = rng.standard_normal((32, 60))
    inv_var = rng.uniform(0.5, 2.0, (32, 60))
    return (x, means, inv_var, rng.standard_normal(32))


def main():
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--repeat", type=int, default=3)
    args = parser.parse_args()
    if _kernels is None:
        print("compiled extension not built; only the numpy fallback is available")
    print(f"{'kernel':<16}{'numpy (s)':>12}{'cython (s)':>12}{'speed-up':>10}{'max rel diff':>14}")
    for name, case in (("cqt_direct", cqt_case), ("gmm_log_joint", gmm_case)):
        inputs = case()
        t_py, ref = best_of(getattr(_pykernels, name), inputs, args.repeat)
        if _kernels is None:
            print(f"{name:<16}{t_py:>12.4f}{'-':>12}{'-':>10}{'-':>14}")
            continue
        t_cy, out = best_of(getattr(_kernels, name), inputs, args.repeat)
        diff = np.max(np.abs(out - ref) / np.maximum(np.abs(ref), 1e-300))
        print(f"{name:<16}{t_py:>12.4f}{t_cy:>12.4f}{t_py / t_cy:>9.2f}x{diff:>14.2e}")


if __name__ == "__main__":
    main()
