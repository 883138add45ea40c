"""Time the numba and numpy backends of the batch estimator kernel.

    python3 benchmarks/bench_kernels.py --reps 200000 --kinds 2 8 32
"""

from __future__ import annotations

import argparse
import time

import numpy as np

from partvar import _kernels


def _problem(reps: int, kinds: int, seed: int):
    rng = np.random.default_rng(seed)
    counts = rng.poisson(50.0, (reps, kinds))
    m = rng.uniform(0.5, 2.0, kinds)
    c = rng.uniform(0.0, 1.0, kinds)
    b = rng.uniform(-0.01, 0.01, (kinds, kinds))
    return counts, m, c, (b + b.T) / 2


def _time(backend: str, problem, repeat: int) -> float:
    best = float("inf")
    for _ in range(repeat):
        t0 = time.perf_counter()
        _kernels.evaluate_batch(*problem, backend=backend)
        best = min(best, time.perf_counter() - t0)
    return best


def main(argv=None) -> None:
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--reps", type=int, default=200_000)
    p.add_argument("--kinds", type=int, nargs="+", default=[2, 8, 32])
    p.add_argument("--repeat", type=int, default=3)
    p.add_argument("--seed", type=int, default=0)
    args = p.parse_args(argv)

    backends = ["numpy"] + (["numba"] if _kernels.HAVE_NUMBA else [])
    if "numba" in backends:
        _kernels.evaluate_batch(*_problem(10, 2, 0), backend="numba")  # compile outside the timing
    print(f"{'kinds':>6} {'reps':>9} " + " ".join(f"{b + ' s':>10}" for b in backends) + "   speedup   max rel diff")
    for T in args.kinds:
        prob = _problem(args.reps, T, args.seed)
        times = {b: _time(b, prob, args.repeat) for b in backends}
        line = f"{T:>6} {args.reps:>9} " + " ".join(f"{times[b]:>10.3f}" for b in backends)
        if "numba" in times:
            a = _kernels.evaluate_batch(*prob, backend="numba")[2]
            b = _kernels.evaluate_batch(*prob, backend="numpy")[2]
            ok = np.isfinite(a) & np.isfinite(b) & (b != 0)
            diff = float(np.max(np.abs(a[ok] / b[ok] - 1.0))) if ok.any() else 0.0
            line += f"   {times['numpy'] / times['numba']:>6.1f}x   {diff:.1e}"
        print(line)


if __name__ == "__main__":
    main()
