"""Compare the compiled and numpy feasibility kernels.

Run ``python3 benchmarks/bench_kernels.py``.  Shapes mirror a realistic
decision: every table-feasible ego sequence against every surviving branch.
"""
import argparse
import timeit

import numpy as np

from hmdp_mpc import _kernels_py, kernels


def make_inputs(N, M, H, seed=0):
    rng = np.random.default_rng(seed)
    ego_x = 100 + rng.normal(0, 30, (N, H))
    ego_lane = rng.integers(1, 4, (N, H))
    sa_x = 100 + rng.normal(0, 60, (M, H))
    tight = np.abs(rng.normal(0, 1, (M, H)))
    sa_lane = rng.integers(1, 4, (M, H))
    return ego_x, ego_lane, sa_x, tight, sa_lane, 20.0


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--repeat", type=int, default=200)
    args = ap.parse_args()
    print(f"compiled backend available: {kernels.BACKEND == 'cython'}")
    for N, M, H in ((81, 20, 3), (729, 60, 3), (729, 400, 3)):
        inputs = make_inputs(N, M, H)
        ref = _kernels_py.sequence_feasibility(*inputs)
        t_py = min(timeit.repeat(lambda: _kernels_py.sequence_feasibility(*inputs), number=args.repeat, repeat=3))
        line = f"N={N:4d} M={M:4d} H={H}  python {1e6 * t_py / args.repeat:9.1f} us"
        if kernels.BACKEND == "cython":
            assert np.array_equal(kernels.sequence_feasibility(*inputs), ref)
            t_c = min(timeit.repeat(lambda: kernels.sequence_feasibility(*inputs), number=args.repeat, repeat=3))
            line += f"  cython {1e6 * t_c / args.repeat:9.1f} us  speedup {t_py / t_c:5.1f}x"
        print(line)


if __name__ == "__main__":
    main()
