"""Compare the compiled and pure-Python BL distance kernels.

Run with ``python3 benchmarks/bench_kernels.py``.  Reports the best of
several repeats for single calls and for a batched nearest-neighbour sweep
of the kind the quantizer performs, plus the largest disagreement between
the two backends.
"""
import argparse
import timeit

import numpy as np

from fwpomdp import _kernels_py

try:
    from fwpomdp import _kernels as compiled
except ImportError:
    compiled = None


def random_problem(rng, n_states, n_rows):
    pts = rng.normal(size=(n_states, 2))
    d = np.linalg.norm(pts[:, None] - pts[None], axis=-1) + 0.05 * (1 - np.eye(n_states))
    query = rng.dirichlet(np.ones(n_states))
    rows = rng.dirichlet(np.ones(n_states), size=n_rows)
    return query, rows, d


def best_time(fn, repeat, number):
    return min(timeit.repeat(fn, repeat=repeat, number=number)) / number


def main():
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--sizes", default="2,3,4,6,8")
    parser.add_argument("--rows", type=int, default=256)
    parser.add_argument("--repeat", type=int, default=5)
    parser.add_argument("--seed", type=int, default=0)
    args = parser.parse_args()
    if compiled is None:
        print("compiled kernels are not built; run `python3 setup.py build_ext --inplace` first")
        return
    rng = np.random.default_rng(args.seed)
    print(f"{'states':>6} {'single py (us)':>15} {'single cy (us)':>15} {'batch py (ms)':>14} "
          f"{'batch cy (ms)':>14} {'speedup':>8} {'max diff':>9}")
    for n in (int(s) for s in args.sizes.split(",")):
        q, rows, d = random_problem(rng, n, args.rows)
        single_py = best_time(lambda: _kernels_py.bl_distance(q, rows[0], d), args.repeat, 200)
        single_cy = best_time(lambda: compiled.bl_distance(q, rows[0], d), args.repeat, 200)
        batch_py = best_time(lambda: _kernels_py.bl_distances(q, rows, d), args.repeat, 1)
        batch_cy = best_time(lambda: compiled.bl_distances(q, rows, d), args.repeat, 1)
        diff = np.max(np.abs(_kernels_py.bl_distances(q, rows, d) - compiled.bl_distances(q, rows, d)))
        print(f"{n:>6} {single_py * 1e6:>15.1f} {single_cy * 1e6:>15.1f} {batch_py * 1e3:>14.2f} "
              f"{batch_cy * 1e3:>14.2f} {batch_py / batch_cy:>7.1f}x {diff:>9.1e}")


if __name__ == "__main__":
    main()
