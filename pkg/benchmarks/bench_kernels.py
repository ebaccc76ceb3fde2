"""Time the compiled kernels against the numpy fallback on the same inputs.

    python benchmarks/bench_kernels.py [--repeats 5]

Prints one line per kernel and size with the median time of each backend,
the speed-up and the largest absolute difference between their outputs.
"""
from __future__ import annotations

import argparse
import statistics
import time

import numpy as np

from smc import _pykernels

try:
    from smc import _ckernels
except ImportError:
    _ckernels = None


def _median_time(fn, repeats: int) -> float:
    times = []
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return statistics.median(times)


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeats", type=int, default=5)
    args = ap.parse_args()
    if _ckernels is None:
        raise SystemExit("compiled extension not built; reinstall without SMC_NO_EXT")
    rng = np.random.default_rng(0)
    print(f"{'kernel':<12}{'size':>22}{'numpy s':>12}{'cython s':>12}{'speed-up':>10}{'max diff':>12}")
    for m, n, d in [(500, 500, 2), (2000, 500, 2), (500, 1000, 64)]:
        q, s = rng.normal(size=(m, d)), rng.normal(size=(n, d))
        h = rng.uniform(0.2, 1.0, d)
        tp = _median_time(lambda: _pykernels.kde_logpdf(q, s, h), args.repeats)
        tc = _median_time(lambda: _ckernels.kde_logpdf(q, s, h), args.repeats)
        diff = np.max(np.abs(_pykernels.kde_logpdf(q, s, h) - np.asarray(_ckernels.kde_logpdf(q, s, h))))
        print(f"{'kde_logpdf':<12}{f'm={m} n={n} d={d}':>22}{tp:>12.5f}{tc:>12.5f}{tp / tc:>10.2f}{diff:>12.2e}")
    for n, d in [(10, 2), (80, 2), (400, 8)]:
        z, c = rng.normal(size=(n, d)), rng.uniform(-1, 1, (n, n))
        tp = _median_time(lambda: _pykernels.pair_loss(z, c), args.repeats * 20)
        tc = _median_time(lambda: _ckernels.pair_loss(z, c), args.repeats * 20)
        vp, gp = _pykernels.pair_loss(z, c)
        vc, gc = _ckernels.pair_loss(z, c)
        diff = max(abs(vp - vc), float(np.max(np.abs(gp - np.asarray(gc)))))
        print(f"{'pair_loss':<12}{f'n={n} d={d}':>22}{tp:>12.6f}{tc:>12.6f}{tp / tc:>10.2f}{diff:>12.2e}")


if __name__ == "__main__":
    main()
