"""Time the compiled kernels against their pure-Python twins.

Run ``python3 benchmarks/bench_kernels.py``; prints one line per kernel with the
best of several repeats and the speedup.  Requires the built extension.
"""
import argparse
import timeit

import numpy as np

from statecompress import _purepy
from statecompress.markov import _cdf_table
from statecompress.synth import gen_low_rank_chain

try:
    from statecompress import _kernels
except ImportError:  # pragma: no cover
    raise SystemExit("compiled kernels are not built; run `pip install -e . --no-build-isolation`")


def cases(n, p, rng):
    P = gen_low_rank_chain(p, 3, seed=0).P
    cdf = np.ascontiguousarray(_cdf_table(P))
    uniforms = rng.random(n)
    states = _kernels.sample_path(cdf, 0, uniforms)
    X = np.ascontiguousarray(rng.standard_normal((20 * p, 3)))
    centers = np.ascontiguousarray(X[:3].copy())
    return {
        "sample_path": lambda k: k.sample_path(cdf, 0, uniforms),
        "count_pairs": lambda k: k.count_pairs(states, p),
        "nearest_center": lambda k: k.nearest_center(X, centers),
    }


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("-n", type=int, default=200_000, help="trajectory length")
    ap.add_argument("-p", type=int, default=200, help="number of states")
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args()
    rng = np.random.default_rng(0)
    print(f"n={args.n} p={args.p} (best of {args.repeat})")
    for name, fn in cases(args.n, args.p, rng).items():
        fast = min(timeit.repeat(lambda: fn(_kernels), number=1, repeat=args.repeat))
        slow = min(timeit.repeat(lambda: fn(_purepy), number=1, repeat=args.repeat))
        print(f"{name:15s} cython {fast * 1e3:9.2f} ms   python {slow * 1e3:9.2f} ms   speedup {slow / fast:6.1f}x")


if __name__ == "__main__":
    main()
