"""Time the compiled metric kernels against the numpy fallback.

Run with ``python benchmarks/bench_kernels.py [--repeat N]``. Reports the
best-of-N wall time per call for each backend and the speedup.
"""

from __future__ import annotations

import argparse
import timeit

import numpy as np

from cogcap import _kernels_py

try:
    from cogcap import _kernels
except ImportError:  # extension not built
    _kernels = None


def cases(rng: np.random.Generator):
    scores = rng.random(2000)
    scores[::7] = np.round(scores[::7], 2)
    labels = rng.random(2000) < 0.4
    p_hat = np.sort(rng.random(150))
    thresholds = np.linspace(0.0, 1.0, 101)
    return {
        "first_crossings (150 frames x 101 thr)": lambda k: k.first_crossings(p_hat, thresholds),
        "average_precision (2000 videos)": lambda k: k.average_precision(scores, labels),
        "auc (2000 videos)": lambda k: k.auc(scores, labels),
    }


def main() -> None:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--repeat", type=int, default=5)
    parser.add_argument("--number", type=int, default=200)
    args = parser.parse_args()
    rng = np.random.default_rng(0)
    print(f"{'kernel':<42} {'numpy us':>10} {'compiled us':>12} {'speedup':>8}")
    for name, call in cases(rng).items():
        py = min(timeit.repeat(lambda: call(_kernels_py), number=args.number, repeat=args.repeat)) / args.number
        if _kernels is None:
            print(f"{name:<42} {py * 1e6:>10.1f} {'n/a':>12} {'-':>8}")
            continue
        np.testing.assert_allclose(call(_kernels), call(_kernels_py), rtol=0, atol=1e-12)
        cy = min(timeit.repeat(lambda: call(_kernels), number=args.number, repeat=args.repeat)) / args.number
        print(f"{name:<42} {py * 1e6:>10.1f} {cy * 1e6:>12.1f} {py / cy:>7.1f}x")


if __name__ == "__main__":
    main()
