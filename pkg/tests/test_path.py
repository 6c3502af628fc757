import math

import numpy as np
import pytest

from dagcd.dataset import CategoricalDataset
from dagcd.graph import DagStructure
from dagcd.multilogit import loglik, probabilities
from dagcd.path import (
    W_MAX,
    PathConfig,
    SolutionPath,
    difference_ratios,
    fit_path,
    lambda_grid,
    lambda_max,
    match_edge_count,
    refit_mle,
    select_model,
    weights_from_pilot,
    write_path_csv,
    write_path_edges,
)
from dagcd.multilogit import ParamVector
from dagcd.simulate import GraphSpec, SampleSpec, generate_graph, sample_data
from dagcd.solver import SolverConfig


@pytest.fixture(scope="module")
def small_ds():
    g = DagStructure(5, [(0, 1), (1, 2), (0, 3), (3, 4)])
    return sample_data(g, SampleSpec(n_per_block=30, seed=7))


@pytest.fixture(scope="module")
def small_path(small_ds):
    return fit_path(small_ds, np.ones((5, 5)), PathConfig(J=10))


# -- selection ----------------------------------------------------------------


def test_select_worked_example():
    sel = select_model(((0, 2, 4, 5), (-100.0, -80.0, -70.0, -69.5)), 0.1)
    np.testing.assert_allclose(sel.dr, [10.0, 5.0, 0.5])
    assert sel.threshold == pytest.approx(1.0)
    assert sel.index == 2  # third entry
    assert not sel.degenerate


def test_select_two_entries_and_alpha_one():
    assert select_model(((0, 3), (-10.0, -9.0)), 0.1).index == 1
    sel = select_model(((0, 2, 4, 5), (-100.0, -80.0, -70.0, -69.5)), 1.0)
    assert sel.index == int(np.nanargmax(sel.dr)) + 1 == 1


def test_select_gap_recursion():
    # e stalls at 2 between entries 1 and 2, so dr into entry 3 spans the gap
    dr = difference_ratios((0, 2, 2, 4), (-50.0, -40.0, -39.0, -30.0))
    assert dr[0] == pytest.approx(5.0)
    assert math.isnan(dr[1]) is False and dr[1] == pytest.approx((-39.0 + 50.0) / 2)
    assert dr[2] == pytest.approx((-30.0 + 39.0) / 2)
    assert math.isnan(difference_ratios((0, 0, 3), (-5.0, -4.0, -1.0))[0])


def test_select_degenerate_path():
    sel = select_model(((0, 0, 0), (-5.0, -5.0, -5.0)))
    assert sel.degenerate and sel.index == 0


def test_select_invariant_to_loglik_shift():
    rng = np.random.default_rng(3)
    for _ in range(20):
        e = np.sort(rng.integers(0, 30, size=12))
        e[0] = 0
        ll = np.cumsum(rng.uniform(0, 10, size=12)) - 500.0
        a = select_model((e, ll), 0.1)
        b = select_model((e, ll + 1234.5), 0.1)
        assert a.index == b.index and a.degenerate == b.degenerate


def test_select_rejects_bad_input():
    with pytest.raises(ValueError):
        select_model(((0,), (-1.0,)))
    with pytest.raises(ValueError):
        select_model(((0, 1), (-2.0, -1.0)), 0.0)


def test_match_edge_count():
    assert match_edge_count(np.array([0, 10, 20]), 12) == 1
    assert match_edge_count(np.array([0, 10, 20]), 15) == 1
    assert match_edge_count(np.array([0, 10, 20]), 0) == 0
    with pytest.raises(ValueError):
        match_edge_count(np.array([], dtype=int), 3)


# -- weights ------------------------------------------------------------------


def _pilot_with_norms(norms):
    p = norms.shape[0]
    beta = ParamVector.zeros(np.full(p, 2))
    for j in range(p):
        for i in range(p):
            if i != j and norms[j, i] > 0:
                # a binary sum-to-zero group (a, -a) has norm a * sqrt(2)
                a = norms[j, i] / math.sqrt(2)
                beta.coef[j, i, :2, 0] = (a, -a)
    return beta


def test_adaptive_weight_examples():
    norms = np.zeros((3, 3))
    norms[1, 0] = 2.0
    W = weights_from_pilot(_pilot_with_norms(norms), gamma=1.0)
    assert W[0, 1] == pytest.approx(0.5) and W[1, 0] == pytest.approx(0.5)
    assert W[2, 0] == W[0, 2] == W_MAX
    assert np.all(np.diag(W) == 0.0)


def test_adaptive_weights_symmetric_and_gamma_covariant():
    rng = np.random.default_rng(11)
    norms = rng.uniform(0.1, 3.0, size=(5, 5)) * (rng.random((5, 5)) < 0.5)
    pilot = _pilot_with_norms(norms)
    W1 = weights_from_pilot(pilot, 1.0)
    W2 = weights_from_pilot(pilot, 2.5)
    np.testing.assert_array_equal(W1, W1.T)
    finite = (W1 < W_MAX) & ~np.eye(5, dtype=bool)
    assert finite.any()
    np.testing.assert_allclose(W2[finite], W1[finite] ** 2.5, rtol=1e-12)


# -- grid and path ------------------------------------------------------------


def test_lambda_grid():
    grid = lambda_grid(3.7, 30, 0.1)
    assert grid.size == 30
    assert np.all(np.diff(grid) < 0)
    assert grid[0] == 3.7 and grid[-1] / grid[0] == 0.1
    np.testing.assert_allclose(np.diff(np.log(grid)), np.log(0.1) / 29)
    with pytest.raises(ValueError):
        lambda_grid(0.0, 5, 0.1)


def test_lambda_max_scales_with_weights(small_ds):
    W = np.ones((5, 5))
    assert lambda_max(small_ds, 2 * W) == pytest.approx(lambda_max(small_ds, W) / 2, rel=1e-12)


def test_path_first_entry_empty(small_path):
    assert small_path[0].edges == 0
    assert small_path.edge_counts[-1] > 0
    assert len(small_path) == 10
    assert small_path.stalls == 0


def test_warm_and_cold_start_agree(small_ds, small_path):
    cold = fit_path(small_ds, np.ones((5, 5)), PathConfig(J=10, warm_start=False))
    for a, b in zip(small_path.entries, cold.entries):
        assert a.lam == b.lam
        assert abs(a.objective - b.objective) <= 1e-4 * abs(b.objective)


def test_refit_at_least_path_loglik(small_ds, small_path):
    for e in small_path.entries:
        assert e.refit_loglik >= loglik(e.params, small_ds) - 1e-6
        assert e.refit_converged


def test_refit_empty_balanced():
    n = 40
    ds = CategoricalDataset(np.column_stack([np.tile([1, 2], n // 2)] * 2), [2, 2])
    beta, ll, ok = refit_mle(ds, DagStructure(2, []))
    assert ok
    assert ll == pytest.approx(2 * n * math.log(0.5), abs=1e-9)
    assert np.abs(beta.intercept).max() < 1e-9


def test_refit_recovers_chain_probabilities():
    g = DagStructure(3, [(0, 1), (1, 2)])
    ds = sample_data(g, SampleSpec(n_obs=2000, seed=5))
    beta, _, ok = refit_mle(ds, g)
    assert ok
    match = math.exp(2) / (math.exp(2) + 1)
    # dummy row: constant, then one indicator per binary node
    for parent, child in ((0, 1), (1, 2)):
        for lev in (0, 1):
            x = np.zeros(4)
            x[0] = 1.0
            x[1 + parent] = lev
            probs = probabilities(beta, x, child)
            assert probs[lev] == pytest.approx(match, abs=0.05)
    # root is uniform
    assert probabilities(beta, np.array([1.0, 0, 0, 0]), 0)[0] == pytest.approx(0.5, abs=0.05)


def test_refit_rejects_mismatched_graph(small_ds):
    with pytest.raises(ValueError):
        refit_mle(small_ds, DagStructure(4, []))


def test_refit_cache_reused(small_ds):
    from dagcd.path import RefitCache

    cache = RefitCache()
    g = DagStructure(5, [(0, 1)])
    a = refit_mle(small_ds, g, cache=cache)
    size = len(cache)
    b = refit_mle(small_ds, g, cache=cache)
    assert len(cache) == size == 5
    assert a[1] == b[1]


def test_path_config_validation():
    with pytest.raises(ValueError):
        PathConfig(J=1)
    with pytest.raises(ValueError):
        PathConfig(ratio=1.5)
    with pytest.raises(ValueError):
        PathConfig(gamma=0.0)


def test_path_outputs(tmp_path, small_path):
    sel = select_model(small_path)
    write_path_csv(small_path, sel, tmp_path / "path.csv")
    rows = (tmp_path / "path.csv").read_text().splitlines()
    assert rows[0] == "m,lambda,edges,penalized_objective,refit_loglik,dr,selected_flag"
    assert len(rows) == 11
    flags = [r.split(",")[-1] for r in rows[1:]]
    assert flags.count("1") == 1 and flags.index("1") == sel.index
    write_path_edges(small_path, tmp_path / "edges.csv")
    lines = (tmp_path / "edges.csv").read_text().splitlines()
    assert len(lines) - 1 == int(small_path.edge_counts.sum())


def test_simulated_scalefree_path_edge_count_growth():
    # monitored rather than asserted monotone: only the endpoints are checked
    g = generate_graph(GraphSpec("scalefree", 10, seed=1))
    ds = sample_data(g, SampleSpec(n_per_block=20, seed=2))
    path = fit_path(ds, np.ones((10, 10)), PathConfig(J=8), SolverConfig())
    assert isinstance(path, SolutionPath)
    assert path.edge_counts[0] == 0 and path.edge_counts[-1] >= 5
