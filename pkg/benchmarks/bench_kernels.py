"""Time the compiled kernels against the pure-Python fallback.

    python benchmarks/bench_kernels.py [--repeat 5] [--scale 1.0]
"""

import argparse
import importlib
import timeit

import numpy as np

from anchoriter import _kernels_py


def cases(scale, rng):
    n_blocks = int(40_000 * scale)
    lengths = rng.geometric(0.2, n_blocks).astype(np.int64)
    values = rng.standard_normal(int(lengths.sum()))
    n_steps = int(100_000 * scale)
    x0 = np.zeros(8)
    x0[0] = 10.0
    noise = 1e-3 * rng.standard_normal((n_steps - n_steps // 5, 8))
    n_pairs = int(200_000 * scale)
    X, Y = rng.standard_normal((n_pairs, 6)), rng.standard_normal((n_pairs, 6))
    FX, FY = np.tanh(X), np.tanh(Y)
    return {
        "segment_sums": lambda m: m.segment_sums(values, lengths),
        "staircase_norms": lambda m: m.staircase_norms(x0, n_steps, 5, 0.01, 0.8, noise, False),
        "max_pair_ratio": lambda m: m.max_pair_ratio(FX, FY, X, Y),
    }


def main():
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--repeat", type=int, default=5)
    parser.add_argument("--scale", type=float, default=1.0, help="problem size multiplier")
    args = parser.parse_args()

    try:
        compiled = importlib.import_module("anchoriter._kernels")
    except ImportError:
        compiled = None
        print("compiled extension not built; timing the fallback only")

    rng = np.random.default_rng(0)
    print(f"{'kernel':<18}{'python (ms)':>14}{'cython (ms)':>14}{'speedup':>10}")
    for name, call in cases(args.scale, rng).items():
        t_py = min(timeit.repeat(lambda: call(_kernels_py), number=1, repeat=args.repeat)) * 1e3
        if compiled is None:
            print(f"{name:<18}{t_py:>14.2f}{'-':>14}{'-':>10}")
            continue
        ref, got = call(_kernels_py), call(compiled)
        if not np.allclose(np.asarray(ref, dtype=float), np.asarray(got, dtype=float), rtol=1e-12):
            raise SystemExit(f"{name}: backends disagree")
        t_c = min(timeit.repeat(lambda: call(compiled), number=1, repeat=args.repeat)) * 1e3
        print(f"{name:<18}{t_py:>14.2f}{t_c:>14.2f}{t_py / t_c:>9.1f}x")


if __name__ == "__main__":
    main()
