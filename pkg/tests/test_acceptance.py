"""End-to-end acceptance checks.

Every criterion prints one ``PASS``/``FAIL`` line (repeated in the pytest
terminal summary). The reproduction runs are marked ``slow``; deselect them
with ``-m "not slow"``. ``DAGCD_THREADS`` sets the worker count of the
replicate runs (default: all cores).
"""
import math
import os
import time

import numpy as np
import pytest
from scipy.optimize import minimize

from conftest import random_dataset
from test_multilogit import finite_difference, random_params
from dagcd.cli import DEFAULTS, run_bench
from dagcd.graph import DagStructure
from dagcd.metrics import aggregate
from dagcd.multilogit import ParamVector, PenaltyConfig, block_gradient, penalized_objective
from dagcd.path import fit_adaptive, lambda_grid
from dagcd.simulate import GraphSpec, SampleSpec, generate_graph, sample_data
from dagcd.solver import CDSolver, SolverConfig, group_prox_update, inner_loop, mle_intercepts

THREADS = int(os.environ.get("DAGCD_THREADS", os.cpu_count() or 1))
ROOT_SEED = 1

_property_seconds: list[float] = []


@pytest.fixture
def timed():
    t0 = time.perf_counter()
    yield
    _property_seconds.append(time.perf_counter() - t0)


# ----------------------------------------------------------------------
# 1. property suite


def test_1a_gradient_finite_differences(criterion, timed):
    rng = np.random.default_rng(101)
    worst = 0.0
    for _ in range(50):
        p = int(rng.integers(2, 5))
        ds = random_dataset(rng, p=p, n=int(rng.integers(5, 21)), r_max=3)
        beta = random_params(rng, ds.levels)
        j = int(rng.integers(p))
        i = int(rng.choice([k for k in range(p) if k != j]))
        g = block_gradient(beta, ds, j, i)
        fd = finite_difference(beta, ds, j, i)
        worst = max(worst, np.abs(g - fd).max() / max(1.0, np.abs(fd).max()))
    assert criterion("1a gradient vs central differences, 50 draws, rel. err < 1e-5",
                     worst < 1e-5, f"worst {worst:.2e}")


def _audited_paths(n_sets=10, J=30):
    """Warm-started unit-weight paths with invariant checks and a KKT audit per entry."""
    rng = np.random.default_rng(202)
    worst_zero = worst_active = -math.inf
    empties = 0
    for _ in range(n_sets):
        ds = random_dataset(rng, p=5, n=60, r_max=3)
        W = np.ones((5, 5))
        s = CDSolver(ds, W, SolverConfig(inner_tol=1e-7, max_inner=5000, check_invariants=True))
        grid = lambda_grid(s.lambda_max(), J, 0.1)
        for m, lam in enumerate(grid):
            s.solve(float(lam))
            if m == 0:
                empties += int(len(s.graph()) == 0)
            zero, active = s.kkt_audit()
            worst_zero = max(worst_zero, zero - 1e-4 * (1.0 + lam))
            worst_active = max(worst_active, active - 1e-3)
    return worst_zero, worst_active, empties


@pytest.fixture(scope="module")
def audited():
    t0 = time.perf_counter()
    out = _audited_paths()
    _property_seconds.append(time.perf_counter() - t0)
    return out


def test_1b_kkt_audit_every_path_entry(criterion, audited):
    worst_zero, worst_active, _ = audited
    assert criterion("1b KKT audit at every entry of 10 paths", worst_zero <= 0 and worst_active <= 0,
                     f"zero-group excess {worst_zero:.2e}, active-group excess {worst_active:.2e}")


def test_1c_1d_invariants_on_suite_runs(criterion, audited):
    # the audited runs raise InvariantError on any acyclicity, mutual-exclusion,
    # sum-to-zero (1e-8) or monotonicity violation, after every pair update and pass
    criterion("1c acyclicity and mutual exclusion at every sweep", True, "checked inline")
    assert criterion("1d group sum-to-zero within 1e-8 at every checkpoint", True, "checked inline")


def test_1e_lambda_max_gives_empty_graph(criterion, audited):
    _, _, empties = audited
    assert criterion("1e fit at lambda_1 is empty on 10 datasets", empties == 10, f"{empties}/10")


def _surrogate(beta, grad, cur, h, lw):
    diff = beta - cur
    return -(grad @ diff + 0.5 * h * diff @ diff) + lw * np.linalg.norm(beta)


def test_1f_prox_vs_numerical_minimizer(criterion, timed):
    rng = np.random.default_rng(303)
    worst = 0.0
    for _ in range(100):
        m = int(rng.integers(1, 6))
        grad = rng.normal(scale=3, size=m)
        cur = rng.normal(size=m) * (rng.random() < 0.7)
        h = -rng.uniform(0.1, 5.0)
        lw = rng.uniform(0, 6)
        got = group_prox_update(grad, cur, h, lw)
        starts = [got + rng.normal(scale=0.5, size=m), np.full(m, 1e-3)]
        best = min((minimize(_surrogate, x0, args=(grad, cur, h, lw), method="Powell",
                             options={"xtol": 1e-12, "ftol": 1e-14, "maxiter": 20000})
                    for x0 in starts), key=lambda r: r.fun)
        worst = max(worst, float(np.abs(got - best.x).max()))
    assert criterion("1f prox update vs numerical minimizer, 100 draws, 1e-6",
                     worst < 1e-6, f"worst {worst:.2e}")


def test_1_suite_runtime(criterion):
    total = sum(_property_seconds)
    assert criterion("1  property suite under 1 minute", total < 60.0, f"{total:.1f} s")


# ----------------------------------------------------------------------
# 2. inner loop against an independent reference optimizer


def _fista_node(Z, y, pen, iters=200000, tol=1e-13):
    """Accelerated proximal gradient on one binary logistic node with l1 terms."""
    L = 0.25 * np.linalg.norm(Z, 2) ** 2
    t = np.zeros(Z.shape[1])
    z, s = t.copy(), 1.0
    for _ in range(iters):
        g = Z.T @ (1.0 / (1.0 + np.exp(-(Z @ z))) - y)
        v = z - g / L
        new = np.sign(v) * np.maximum(np.abs(v) - pen / L, 0.0)
        if (new - t) @ (z - new) > 0:  # restart on non-monotone momentum
            s = 1.0
        s2 = (1.0 + math.sqrt(1.0 + 4.0 * s * s)) / 2.0
        z = new + (s - 1.0) / s2 * (new - t)
        done = np.abs(new - t).max() < tol
        t, s = new, s2
        if done:
            break
    eta = Z @ t
    return float(np.logaddexp(0.0, eta).sum() - y @ eta + pen @ np.abs(t))


def _reference_objective(ds, active, lam):
    # binary groups are (a, -a); in log-odds form u = -2a and ||group|| = |u| / sqrt(2)
    total = 0.0
    for j in range(ds.p):
        rows = ds.observational_rows(j)
        pa = sorted(i for i, k in active if k == j)
        Z = np.column_stack([np.ones(rows.size)] +
                            [(ds.values[rows, i] == 2).astype(float) for i in pa])
        pen = np.array([0.0] + [lam / math.sqrt(2.0)] * len(pa))
        total += _fista_node(Z, (ds.values[rows, j] == 2).astype(float), pen)
    return total


def test_2_inner_loop_matches_reference(criterion):
    rng = np.random.default_rng(404)
    worst = worst_default = -math.inf
    for _ in range(20):
        p = int(rng.integers(2, 4))
        order = rng.permutation(p).tolist()
        pairs = [(order[a], order[b]) for a in range(p) for b in range(a + 1, p)]
        edges = [e for e in pairs if rng.random() < 0.7] or pairs[:1]
        ds = sample_data(DagStructure(p, edges),
                         SampleSpec(n_per_block=int(rng.integers(10, 30)),
                                    seed=int(rng.integers(1 << 30))))
        active = edges if rng.random() < 0.5 else pairs
        W = np.ones((p, p))
        lam = float(rng.uniform(0.05, 0.9) * CDSolver(ds, W).lambda_max())
        pen = PenaltyConfig(lam, W)
        start = ParamVector.zeros(ds.levels)
        start.intercept[:] = mle_intercepts(ds)
        ref = _reference_objective(ds, active, lam)
        tight, _ = inner_loop(start, ds, SolverConfig(inner_tol=1e-7, max_inner=100000), pen, active)
        default, _ = inner_loop(start, ds, SolverConfig(), pen, active)
        worst = max(worst, abs(penalized_objective(tight, ds, pen) - ref))
        worst_default = max(worst_default, penalized_objective(default, ds, pen) - ref)
    assert criterion("2  inner loop vs long-run reference, objective gap < 1e-6", worst < 1e-6,
                     f"gap {worst:.1e} at inner_tol 1e-7; {worst_default:.1e} at default 1e-4")


# ----------------------------------------------------------------------
# 3-7. reproduction runs


def _bench(**overrides):
    cfg = dict(DEFAULTS, seed=ROOT_SEED, threads=THREADS, replicates=20)
    cfg.update(overrides)
    recs, _ = run_bench(cfg)
    return recs


@pytest.fixture(scope="module")
def table2():
    recs = _bench(family="scalefree,bipartite,smallworld,polytree", p=50, n_per_block=5,
                  match_edges=35)
    return {fam: [r for r in recs if r["family"] == fam] for fam in
            ("scalefree", "bipartite", "smallworld", "polytree")}


def _means(recs, key="dag"):
    good = [r[key] for r in recs if r["ok"]]
    agg = aggregate(good)
    return agg["TPR"][0], agg["FDR"][0], len(good)


TABLE2_BANDS = {
    "scalefree": ((0.63, 0.93), 0.45),
    "bipartite": ((0.56, 0.87), 0.45),
    "smallworld": ((0.18, 0.45), 0.60),
}


@pytest.mark.slow
@pytest.mark.parametrize("family", list(TABLE2_BANDS))
def test_3_table2_cell(criterion, table2, family):
    (lo, hi), fdr_max = TABLE2_BANDS[family]
    tpr, fdr, n_ok = _means(table2[family])
    ok = n_ok == 20 and lo <= tpr <= hi and fdr <= fdr_max
    assert criterion(f"3  {family} (250, 50): TPR in [{lo}, {hi}], FDR <= {fdr_max}", ok,
                     f"TPR {tpr:.3f}, FDR {fdr:.3f}, {n_ok}/20 replicates")


@pytest.mark.slow
def test_3_family_trend(criterion, table2):
    tpr = {f: _means(r)[0] for f, r in table2.items()}
    easiest = min(tpr["polytree"], tpr["scalefree"])
    ok = easiest > tpr["bipartite"] > tpr["smallworld"]
    detail = ", ".join(f"{f} {v:.3f}" for f, v in sorted(tpr.items(), key=lambda kv: -kv[1]))
    # Table 2 itself ranks scale-free > bipartite > polytree > small-world; reported only
    table_order = tpr["scalefree"] > tpr["bipartite"] > tpr["polytree"] > tpr["smallworld"]
    assert criterion("3  trend: polytree/scale-free easiest, small-world hardest", ok,
                     f"{detail}; table-2 ranking reproduced: {table_order}")


@pytest.mark.slow
def test_4_skeleton_edge_matched(criterion, table2):
    tpr, fdr, n_ok = _means(table2["scalefree"], "matched_skeleton")
    P = aggregate([r["matched_skeleton"] for r in table2["scalefree"] if r["ok"]])["P"][0]
    ok = n_ok == 20 and tpr >= 0.55 and fdr <= 0.15
    assert criterion("4  scale-free skeleton matched to 35 edges: TPR >= 0.55, FDR <= 0.15", ok,
                     f"TPR {tpr:.3f}, FDR {fdr:.3f}, mean P {P:.1f}")


@pytest.mark.slow
def test_5_high_dimensional_observational(criterion):
    # observational fits are scored on the skeleton, as direction is not identifiable
    recs = _bench(family="scalefree", p=100, n_obs=50, replicates=5)
    tpr, fdr, n_ok = _means(recs, "skeleton")
    dag_tpr, dag_fdr, _ = _means(recs, "dag")
    ok = n_ok == 5 and tpr >= 0.55 and fdr <= 0.45
    assert criterion("5  observational scale-free (50, 100) skeleton: TPR >= 0.55, FDR <= 0.45", ok,
                     f"mean over 5 replicates: TPR {tpr:.3f}, FDR {fdr:.3f}; "
                     f"directed {dag_tpr:.3f} / {dag_fdr:.3f}")


@pytest.mark.slow
def test_6a_runtime_low_dimensional(criterion, table2):
    secs = [r["seconds"] for recs in table2.values() for r in recs if r["ok"]]
    worst = max(secs)
    assert criterion("6a (250, 50) pilot + adaptive path within 6 min", worst <= 360.0,
                     f"slowest {worst:.0f} s, median {np.median(secs):.0f} s, "
                     f"{THREADS} worker(s) sharing {os.cpu_count()} core(s)")


@pytest.mark.slow
def test_6b_runtime_high_dimensional(criterion):
    g = generate_graph(GraphSpec("scalefree", 200, seed=ROOT_SEED))
    ds = sample_data(g, SampleSpec(n_obs=50, seed=ROOT_SEED))
    t0 = time.perf_counter()
    res = fit_adaptive(ds)
    secs = time.perf_counter() - t0
    assert criterion("6b (50, 200) pilot + adaptive path within 14 min", secs <= 840.0,
                     f"{secs:.0f} s, {len(res.selected.graph)} edges selected")


@pytest.mark.slow
def test_7_outer_loop_stability(criterion, table2):
    recs = [r for rs in table2.values() for r in rs if r["ok"]]
    stable = sum(bool(r["converged"]) for r in recs)
    frac = stable / len(recs)
    assert criterion("7  active set stable within 5 sweeps in >= 90% of (250, 50) replicates",
                     frac >= 0.9, f"{stable}/{len(recs)} replicates, max sweeps "
                     f"{max(r['sweeps'] for r in recs)}")
