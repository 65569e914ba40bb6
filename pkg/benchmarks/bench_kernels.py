"""Time the compiled kernels against the pure-Python fallback.

    python benchmarks/bench_kernels.py [--repeat 5]

Each workload is sized like its real use: CSS residuals over a ~1700-week
series inside a SARIMA(1,0,1)(1,0,1)52 objective, and Hawkes count
simulation for one 1200-week synthetic geography.
"""

from __future__ import annotations

import argparse
import sys
import timeit

import numpy as np

from burstcast import _pykernels

try:
    from burstcast import _ckernels
except ImportError:
    _ckernels = None


def workloads(rng: np.random.Generator) -> dict:
    y = rng.normal(size=1700)
    ar_l, ar_c = [1, 52, 53], [0.5, 0.3, -0.15]
    ma_l, ma_c = [1, 52, 53], [0.2, 0.1, 0.02]
    base = rng.uniform(0.2, 8.0, size=1200)
    u = rng.random(1200)
    lam = rng.uniform(0, 50, size=2000)
    pu = rng.random(2000)
    return {
        "css_residuals (n=1700, 3 AR + 3 MA lags)": lambda m: m.css_residuals(y, ar_l, ar_c, ma_l, ma_c, 53),
        "hawkes_counts (n=1200)": lambda m: m.hawkes_counts(base, 0.25, 0.5, u),
        "poisson_inverse x2000 (rate < 50)": lambda m: [m.poisson_inverse(a, b) for a, b in zip(lam, pu)],
    }


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args(argv)
    if _ckernels is None:
        print("compiled extension is not built; only the fallback can be timed", file=sys.stderr)
    jobs = workloads(np.random.default_rng(0))
    print(f"{'workload':44s} {'python ms':>10s} {'cython ms':>10s} {'speed-up':>9s}")
    for name, job in jobs.items():
        n = 3
        py = min(timeit.repeat(lambda: job(_pykernels), number=n, repeat=args.repeat)) / n * 1e3
        if _ckernels is None:
            print(f"{name:44s} {py:10.3f} {'-':>10s} {'-':>9s}")
            continue
        cy = min(timeit.repeat(lambda: job(_ckernels), number=n, repeat=args.repeat)) / n * 1e3
        print(f"{name:44s} {py:10.3f} {cy:10.3f} {py / cy:8.1f}x")
    return 0


if __name__ == "__main__":
    sys.exit(main())
