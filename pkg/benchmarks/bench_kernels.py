"""Compare the compiled and pure-Python coordinate-descent kernels.

Times three workloads on the same simulated dataset with each available
backend and checks that both reach the same solution:

* ``sweep``  one pass of pair updates over all node pairs,
* ``inner``  one inner pass over the active set at a mid-path penalty,
* ``path``   a short unit-weight path (``--grid-size`` values).

Usage::

    python3 benchmarks/bench_kernels.py --p 30 --n-per-block 5
"""
from __future__ import annotations

import argparse
import statistics
import time

import numpy as np

from dagcd.kernels import BACKENDS
from dagcd.path import PathConfig, fit_path
from dagcd.simulate import GraphSpec, SampleSpec, generate_graph, sample_data
from dagcd.solver import CDSolver, SolverConfig


def _best_of(fn, repeat):
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return min(times), statistics.median(times)


def bench_backend(ds, backend, args):
    W = np.ones((ds.p, ds.p))
    cfg = SolverConfig(backend=backend)
    lam1 = CDSolver(ds, W, cfg).lambda_max()
    lam = args.lam_frac * lam1

    def sweep():
        s = CDSolver(ds, W, cfg)
        s.set_lambda(lam)
        s.refresh_curvature()
        s.pair_sweep()

    warm = CDSolver(ds, W, cfg)
    warm.solve(lam)
    groups = warm.active_groups()

    def inner():
        warm.kernel.inner_pass(groups)

    out = {"sweep": _best_of(sweep, args.repeat), "inner": _best_of(inner, args.repeat * 5)}
    t0 = time.perf_counter()
    path = fit_path(ds, W, PathConfig(J=args.grid_size, refit=False), cfg)
    out["path"] = (time.perf_counter() - t0,) * 2
    out["_objective"] = path[-1].objective
    out["_edges"] = path[-1].edges
    return out


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.split("\n\n")[0])
    ap.add_argument("--family", default="scalefree")
    ap.add_argument("--p", type=int, default=30)
    ap.add_argument("--n-per-block", type=int, default=5)
    ap.add_argument("--grid-size", type=int, default=10)
    ap.add_argument("--lam-frac", type=float, default=0.3, help="penalty as a fraction of lambda_1")
    ap.add_argument("--repeat", type=int, default=3)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args(argv)

    g = generate_graph(GraphSpec(args.family, args.p, seed=args.seed))
    ds = sample_data(g, SampleSpec(n_per_block=args.n_per_block, seed=args.seed + 1))
    print(f"{args.family}, p={ds.p}, n={ds.n}; backends: {', '.join(sorted(BACKENDS))}")

    results = {b: bench_backend(ds, b, args) for b in sorted(BACKENDS)}
    print(f"{'workload':8s}" + "".join(f"{b:>14s}" for b in results) +
          ("   speedup" if len(results) > 1 else ""))
    for work in ("sweep", "inner", "path"):
        best = {b: r[work][0] for b, r in results.items()}
        row = f"{work:8s}" + "".join(f"{best[b] * 1e3:12.2f}ms" for b in results)
        if "cython" in best and "python" in best:
            row += f"   {best['python'] / best['cython']:7.1f}x"
        print(row)
    if len(results) > 1:
        objs = [r["_objective"] for r in results.values()]
        edges = {r["_edges"] for r in results.values()}
        gap = max(objs) - min(objs)
        print(f"final path objective spread {gap:.2e}, edge counts {sorted(edges)}")


if __name__ == "__main__":
    main()
