"""Timing comparison of the numba and numpy kernel backends.

Runs each hot kernel at a representative scale with both implementation
tables and prints median wall times plus the speedup ratio.  Numba timings
exclude JIT compilation (one warmup call per kernel).

    python3 -m seedbankmeta.bench
    python3 -m seedbankmeta.bench --full --repeats 9
"""

import argparse
import statistics
import time

import numpy as np

from ._kernels import NUMBA_AVAILABLE, implementations
from .core import validate_params
from .wfsb import make_block_state


def _time(fn, repeats):
    fn()                                    # warmup / JIT compile
    timings = []
    for _ in range(repeats):
        start = time.perf_counter()
        fn()
        timings.append(time.perf_counter() - start)
    return statistics.median(timings)


def _cases(full):
    params = validate_params(dict(M=100, H=1, g=0.5, c=0.05, p=0.5, k=25,
                                  topology="torus", L=200))
    state = make_block_state(params, 0, params.L, per_patch=params.gm)
    ext = np.zeros(params.L, np.uint8)
    patches = state.patches()
    gm, M, k, c, H = (params.gm, params.M, params.k, params.c, params.H)

    comp = np.ones((5, M), np.uint8)        # saturated neighborhood
    comp_age = np.zeros((5, M), np.int64)
    n_reps = 200_000 if full else 20_000
    X = T = 2000 if full else 600

    def case(impl):
        return {
            "slots": lambda: impl["germination_slots"](3, 0, patches, gm, M),
            "step/aggregate": lambda: impl["step_generation"](
                state.xi, state.age, ext, 3, 0, state.i_min, gm, k, c, H,
                True, "aggregate", False),
            "step/perdraw": lambda: impl["step_generation"](
                state.xi, state.age, ext, 3, 0, state.i_min, gm, k, c, H,
                True, "perdraw", False),
            "offspring": lambda: impl["offspring_batch"](
                comp, comp_age, 3, n_reps, gm, k, c, H, 2, 0),
            "perc_rbar": lambda: impl["perc_rbar"](3, 0.55, X, T, H, 0),
        }
    return case


def main(argv=None):
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--repeats", type=int, default=5)
    parser.add_argument("--full", action="store_true",
                        help="full-scale percolation grid and offspring "
                             "batch (slower)")
    args = parser.parse_args(argv)

    case = _cases(args.full)
    numpy_case = case(implementations("numpy"))
    if not NUMBA_AVAILABLE:
        print("numba not importable; timing the numpy backend only")
        print("kernel\tnumpy[s]")
        for name, fn in numpy_case.items():
            print(f"{name}\t{_time(fn, args.repeats):.6f}", flush=True)
        return 0

    numba_case = case(implementations("numba"))
    print("kernel\tnumba[s]\tnumpy[s]\tspeedup")
    for name in numpy_case:
        t_nb = _time(numba_case[name], args.repeats)
        t_np = _time(numpy_case[name], args.repeats)
        print(f"{name}\t{t_nb:.6f}\t{t_np:.6f}\t{t_np / t_nb:.1f}x",
              flush=True)
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
