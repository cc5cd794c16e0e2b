"""Compare the compiled kernels with the numpy fallback.

    python3 benchmarks/bench_kernels.py [--reps N] [--quick]

Both backends are imported directly, checked for agreement on the same
inputs, then timed on the shapes the analyzer actually uses: small
mini-batches (tens of rows, 1-4 coefficients) called once per iteration,
and long forwarding/scan loops used during feature extraction.
"""
from __future__ import annotations

import argparse
import sys
import timeit

import numpy as np

from insitu_ar import _pykernels

try:
    from insitu_ar import _ckernels
except ImportError:  # extension not built
    _ckernels = None


def cases(rng):
    X = rng.standard_normal((32, 3))
    y = rng.standard_normal(32)
    c = rng.standard_normal(4) * 0.3  # intercept + 3 lags
    seeds = rng.standard_normal((64, 3))
    its = np.arange(2000, dtype=np.float64)
    vals = np.sin(its / 50.0) + 0.01 * rng.standard_normal(its.size)
    return {
        "batch_gradient(32x3)": lambda k: k.batch_gradient(c, X, y, 1.0),
        "gd_step(32x3)": lambda k: k.gd_step(c, X, y, 0.1, 1.0),
        "predict_many(32x3)": lambda k: k.predict_many(c, X),
        "forward_many(64 seeds, 30 steps)": lambda k: k.forward_many(c, seeds, 30),
        "scan_extrema(2000)": lambda k: k.scan_extrema(its, vals),
    }


def _parts(result):
    return result if isinstance(result, tuple) else (result,)


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(description=__doc__.split("\n\n")[0])
    ap.add_argument("--reps", type=int, default=5, help="timing repetitions (best of)")
    ap.add_argument("--quick", action="store_true", help="fewer calls per repetition")
    args = ap.parse_args(argv)

    if _ckernels is None:
        print("compiled extension not built; only the numpy fallback is available")
        return 1
    calls = 200 if args.quick else 2000
    table = cases(np.random.default_rng(0))
    print(f"{'kernel':34s} {'python us':>10s} {'cython us':>10s} {'speedup':>8s}  agree")
    for name, fn in table.items():
        ref, got = fn(_pykernels), fn(_ckernels)
        agree = all(np.allclose(a, b, rtol=1e-10, atol=1e-12)
                    for a, b in zip(_parts(ref), _parts(got)))
        t = {}
        for label, mod in (("py", _pykernels), ("cy", _ckernels)):
            best = min(timeit.repeat(lambda: fn(mod), number=calls, repeat=args.reps))
            t[label] = best / calls * 1e6
        print(f"{name:34s} {t['py']:10.2f} {t['cy']:10.2f} {t['py'] / t['cy']:7.1f}x  {agree}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
