"""The compiled and numpy kernels against the dense reference and each other."""
import numpy as np
import pytest

from conftest import random_dataset
from dagcd.kernels import BACKENDS, get_backend
from dagcd.multilogit import ParamVector, block_gradient, block_loglik, hessian_bound
from dagcd.solver import CDSolver, SolverConfig
from test_multilogit import random_params


def _solver(ds, beta, backend, W=None):
    W = np.ones((ds.p, ds.p)) if W is None else W
    return CDSolver(ds, W, SolverConfig(backend=backend), beta)


def _dag_params(rng, ds):
    """Random parameters supported on a random DAG (i -> j only for i < j)."""
    beta = random_params(rng, ds.levels)
    for j in range(ds.p):
        for i in range(ds.p):
            if i >= j or rng.random() < 0.3:
                beta.coef[j, i] = 0.0
    return beta


def test_get_backend():
    assert get_backend("python") is BACKENDS["python"]
    with pytest.raises(ValueError, match="unavailable"):
        get_backend("fortran")


def test_likelihood_pieces_match_reference(backend):
    rng = np.random.default_rng(3)
    for _ in range(10):
        ds = random_dataset(rng, p=4, n=15)
        beta = _dag_params(rng, ds)
        s = _solver(ds, beta, backend)
        s.refresh_curvature()
        for j in range(ds.p):
            assert s.kernel.node_nll(j) == pytest.approx(-block_loglik(beta, ds, j), rel=1e-12, abs=1e-12)
            assert np.allclose(s.kernel.intercept_grad(j), block_gradient(beta, ds, j, None), atol=1e-12)
            assert s.H0[j] == pytest.approx(hessian_bound(beta, ds, j, None))
            for i in range(ds.p):
                if i == j:
                    continue
                g = np.asarray(s.kernel.group_grad(j, i)).ravel()
                assert np.allclose(g, block_gradient(beta, ds, j, i), atol=1e-12)
                assert s.H[j, i] == pytest.approx(hessian_bound(beta, ds, j, i), rel=1e-12)


@pytest.mark.skipif("cython" not in BACKENDS, reason="compiled kernels not built")
def test_backends_agree_on_a_solve():
    rng = np.random.default_rng(11)
    for _ in range(3):
        ds = random_dataset(rng, p=5, n=40, r_max=3)
        out = {}
        for name in ("cython", "python"):
            s = _solver(ds, None, name)
            lam = 0.4 * s.lambda_max()
            s.solve(lam)
            out[name] = (s.B.copy(), s.B0.copy(), s.graph(), s.objective())
        assert out["cython"][2] == out["python"][2]
        assert np.allclose(out["cython"][0], out["python"][0], atol=1e-8)
        assert np.allclose(out["cython"][1], out["python"][1], atol=1e-8)
        assert out["cython"][3] == pytest.approx(out["python"][3], rel=1e-10)


def test_descend_decreases_node_objective(backend):
    rng = np.random.default_rng(5)
    ds = random_dataset(rng, p=3, n=30)
    s = _solver(ds, None, backend)
    s.set_lambda(0.1 * s.lambda_max())
    s.refresh_curvature()
    f0 = s.objective()
    total, steps, _ = s.kernel.descend(1, 0, 50, 1e-8)
    assert steps >= 1
    assert s.objective() - f0 == pytest.approx(total, abs=1e-9)
    assert total < 0


def test_reachable_skips_the_pair_edge(backend):
    ds = random_dataset(np.random.default_rng(0), p=3, n=10)
    beta = ParamVector.zeros(ds.levels)
    beta.coef[1, 0, 0, 0], beta.coef[1, 0, 1, 0] = 1.0, -1.0  # 0 -> 1
    s = _solver(ds, beta, backend)
    assert s.kernel.reachable(0, 1, -1, -1)
    assert not s.kernel.reachable(0, 1, 0, 1)
    assert not s.kernel.reachable(1, 0, -1, -1)


def test_gallop_matches_linear_scan():
    from dagcd._pykernels import _gallop

    for kmax in (0, 1, 5, 50):
        for kstar in [*range(kmax + 1), None]:
            accept = lambda k: (kstar is not None and k >= kstar, -float(k))
            want = (kstar, -float(kstar)) if kstar is not None else (-1, 0.0)
            for k0 in range(kmax + 1):
                assert _gallop(accept, k0, kmax) == want


def test_kernel_steps_match_sequential_armijo(backend):
    # galloping from the previous step count must land on the same alpha as
    # the plain backtracking scan, step after step
    from dagcd.multilogit import PenaltyConfig
    from dagcd.solver import armijo_step, group_prox_update

    rng = np.random.default_rng(21)
    checked = 0
    for _ in range(8):
        ds = random_dataset(rng, p=3, n=40, r_max=3)
        s = _solver(ds, None, backend)
        lam = 0.05 * s.lambda_max()
        s.set_lambda(lam)
        s.refresh_curvature()
        pen = PenaltyConfig(lam, s.W)
        j, i = 2, 0
        for _ in range(6):
            beta = s.params().copy()
            grad = block_gradient(beta, ds, j, i)
            h = float(s.H[j, i])
            prop = group_prox_update(grad, beta.group(j, i), h, lam * s.W[j, i])
            if np.abs(prop - beta.group(j, i)).max() < 1e-10:
                break
            _, want, stalled = armijo_step(beta, ds, SolverConfig(), pen, j, i, prop)
            s.kernel.descend(j, i, 1, 0.0)
            assert not stalled
            np.testing.assert_allclose(s.params().group(j, i), want, rtol=1e-9, atol=1e-12)
            checked += 1
    assert checked >= 10
