"""Blockwise coordinate descent for the adaptive group-Lasso DAG estimator.

:class:`CDSolver` owns the working arrays and drives the kernels: the
pair sweep with acyclicity guard, intercept updates and the inner loop
over the active set. The module-level functions are small reference
implementations of the single-group pieces, usable on their own.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from .dataset import CategoricalDataset, encode
from .graph import DagStructure, topological_sort
from .kernels import get_backend
from .multilogit import (
    DEFAULT_B,
    ParamVector,
    PenaltyConfig,
    block_gradient,
    block_loglik,
    hessian_bound,
)

__all__ = [
    "SolverConfig",
    "SolveResult",
    "CDSolver",
    "InvariantError",
    "group_prox_update",
    "armijo_step",
    "intercept_update",
    "inner_loop",
    "outer_sweep",
    "mle_intercepts",
]

log = logging.getLogger(__name__)

ICPT_SIGMA = 1e-4


class InvariantError(AssertionError):
    pass


@dataclass
class SolverConfig:
    """Tuning of the coordinate-descent engine.

    ``eta`` is the backtracking factor and ``delta`` the sufficient-decrease
    factor of the line search; ``b`` bounds the curvature surrogate away
    from zero.
    """

    b: float = DEFAULT_B
    eta: float = 0.9
    delta: float = 0.9
    alpha0: float = 1.0
    inner_tol: float = 1e-4
    max_inner: int = 200
    max_outer: int = 5
    max_backtrack: int = 50
    pair_order: str = "fixed"
    seed: int | None = None
    check_invariants: bool = False
    trace: bool = False
    backend: str | None = None

    def __post_init__(self):
        if not (0 < self.eta < 1 and 0 < self.delta < 1):
            raise ValueError("eta and delta must lie in (0, 1)")
        if self.alpha0 <= 0 or self.b <= 0:
            raise ValueError("alpha0 and b must be positive")
        if min(self.max_inner, self.max_outer, self.max_backtrack) < 1:
            raise ValueError("iteration caps must be at least 1")
        if self.pair_order not in ("fixed", "random"):
            raise ValueError("pair_order must be 'fixed' or 'random'")


@dataclass
class SolveResult:
    lam: float
    sweeps: int
    converged: bool
    inner_passes: int
    inner_converged: bool
    stalls: int


# ----------------------------------------------------------------------
# single-group reference pieces


def group_prox_update(grad, beta_cur, h: float, lam_w: float) -> np.ndarray:
    """Closed-form minimizer of the penalized quadratic model of one group.

    With ``d = grad - h * beta_cur`` the result is zero when
    ``||d|| <= lam_w`` and ``-(d - lam_w d / ||d||) / h`` otherwise.
    """
    if not h < 0:
        raise ValueError("curvature bound h must be negative")
    grad = np.asarray(grad, dtype=float)
    d = grad - h * np.asarray(beta_cur, dtype=float)
    nd = float(np.linalg.norm(d))
    if nd <= lam_w:
        return np.zeros_like(d)
    return -(1.0 / h) * (d - lam_w * d / nd)


def _node_objective(beta, ds, pen, j, enc):
    norms = beta.group_norms()[j]
    norms[j] = 0.0
    return -block_loglik(beta, ds, j, enc) + pen.lam * float(pen.weights[j] @ norms)


def armijo_step(beta: ParamVector, ds: CategoricalDataset, cfg: SolverConfig,
                pen: PenaltyConfig, j: int, i: int, proposal, h: float | None = None):
    """Backtracking line search from ``beta_{j.i}`` towards ``proposal``.

    Returns ``(alpha, new_group, stalled)``; ``beta`` is not modified. The
    step is the largest ``alpha0 * eta**k`` (``k <= max_backtrack``) meeting
    the sufficient-decrease rule.
    """
    enc = encode(ds)
    cur = beta.group(j, i)
    proposal = np.asarray(proposal, dtype=float)
    if np.array_equal(proposal, cur):
        raise ValueError("proposal equals the current value; nothing to search")
    grad = block_gradient(beta, ds, j, i, enc)
    lw = pen.lam * pen.weights[j, i]
    s = proposal - cur
    Delta = -float(s @ grad) + lw * (np.linalg.norm(proposal) - np.linalg.norm(cur))
    f0 = _node_objective(beta, ds, pen, j, enc)
    trial = beta.copy()
    for k in range(cfg.max_backtrack + 1):
        alpha = cfg.alpha0 * cfg.eta ** k
        trial.set_group(j, i, cur + alpha * s)
        if _node_objective(trial, ds, pen, j, enc) - f0 <= alpha * cfg.delta * Delta:
            return alpha, cur + alpha * s, False
    return 0.0, cur, True


def intercept_update(beta: ParamVector, ds: CategoricalDataset, cfg: SolverConfig,
                     j: int, h: float | None = None) -> np.ndarray:
    """Unpenalized Newton-surrogate step for ``beta_{j.0}``, re-anchored at level 1.

    The full step is taken unless it fails a weak sufficient-decrease test
    on the node loss (constant ``ICPT_SIGMA``), in which case it is shortened
    by factors of ``eta``.
    """
    enc = encode(ds)
    if h is None:
        h = hessian_bound(beta, ds, j, None, cfg.b, enc)
    cur = beta.intercepts(j)
    g = block_gradient(beta, ds, j, None, enc)
    new = cur - g / h
    s = (new - new[0]) - cur
    slope = float(s @ g)
    if not slope > 0.0:
        return cur
    base = -block_loglik(beta, ds, j, enc)
    trial = beta.copy()
    alpha = 1.0
    for _ in range(cfg.max_backtrack + 1):
        trial.set_intercepts(j, cur + alpha * s)
        if -block_loglik(trial, ds, j, enc) - base <= -ICPT_SIGMA * alpha * slope:
            return cur + alpha * s
        alpha *= cfg.eta
    return cur


def mle_intercepts(ds: CategoricalDataset) -> np.ndarray:
    """Intercept-only MLE per node, with frequencies floored at ``1/(2 n_-j)``."""
    R = int(ds.levels.max())
    out = np.zeros((ds.p, R))
    mask = ds.observational_mask()
    for j in range(ds.p):
        rows = np.flatnonzero(mask[j])
        if rows.size == 0:
            continue
        rj = ds.levels[j]
        freq = np.bincount(ds.values[rows, j] - 1, minlength=rj)[:rj] / rows.size
        freq = np.maximum(freq, 1.0 / (2 * rows.size))
        out[j, :rj] = np.log(freq / freq[0])
    return out


# ----------------------------------------------------------------------
# the engine


class CDSolver:
    """Coordinate-descent state for one dataset and one weight matrix.

    Parameters
    ----------
    ds : CategoricalDataset
    weights : array_like, shape (p, p)
        Symmetric penalty weights; the diagonal is ignored.
    cfg : SolverConfig, optional
    beta : ParamVector, optional
        Starting point; must induce an acyclic graph. Defaults to zero
        coefficients with intercepts at their intercept-only MLEs.
    """

    def __init__(self, ds: CategoricalDataset, weights, cfg: SolverConfig | None = None,
                 beta: ParamVector | None = None):
        self.ds = ds
        self.cfg = cfg or SolverConfig()
        self.backend = get_backend(self.cfg.backend)
        p, n = ds.p, ds.n
        W = np.array(weights, dtype=float)
        if W.shape != (p, p):
            raise ValueError("weights must be p x p")
        np.fill_diagonal(W, 0.0)
        self.W = W
        self.X = np.ascontiguousarray(ds.values - 1, dtype=np.intc)
        self.obs = np.ascontiguousarray(ds.observational_mask(), dtype=np.int8)
        self.r = np.ascontiguousarray(ds.levels, dtype=np.intc)
        if beta is None:
            beta = ParamVector.zeros(ds.levels)
            beta.intercept[:] = mle_intercepts(ds)
        else:
            topological_sort(beta.graph())
        self.B = np.ascontiguousarray(beta.coef, dtype=float)
        self.B0 = np.ascontiguousarray(beta.intercept, dtype=float)
        self.E = np.zeros((p, n, self.B.shape[2]))
        self.H = np.full((p, p), -self.cfg.b)
        self.H0 = np.full(p, -self.cfg.b)
        self.adj = np.zeros((p, p), dtype=np.int8)
        self.stats = np.zeros(4, dtype=np.int64)
        self.kernel = self.backend.KernelState(
            self.X, self.obs, self.r, self.B, self.B0, self.E, self.H, self.H0,
            self.W, self.adj, self.stats,
            lam=0.0, ls_eta=self.cfg.eta, delta=self.cfg.delta, alpha0=self.cfg.alpha0,
            max_bt=self.cfg.max_backtrack, tol=self.cfg.inner_tol, max_iter=self.cfg.max_inner,
        )
        self.kernel.refresh_adjacency()
        self.kernel.refresh_eta()
        self._rng = np.random.default_rng(self.cfg.seed)
        iu = np.triu_indices(p, 1)
        self._pairs = np.ascontiguousarray(np.stack(iu, axis=1), dtype=np.intc)
        self.trace: list[tuple] = []
        self._sweep_no = 0
        self.lam = 0.0

    # -- views -----------------------------------------------------------

    def params(self) -> ParamVector:
        return ParamVector(self.ds.levels, self.B, self.B0)

    def graph(self) -> DagStructure:
        return DagStructure.from_adjacency(self.adj)

    def active_groups(self) -> np.ndarray:
        """``(m, 2)`` array of ``(j, i)`` with ``beta_{j.i} != 0``, row-major order."""
        nz = np.any(self.B != 0.0, axis=(2, 3))
        return np.ascontiguousarray(np.argwhere(nz), dtype=np.intc)

    def objective(self, lam: float | None = None) -> float:
        lam = self.lam if lam is None else lam
        nll = sum(self.kernel.node_nll(j) for j in range(self.ds.p))
        norms = np.sqrt((self.B ** 2).sum(axis=(2, 3)))
        return nll + lam * float((self.W * norms).sum())

    def loglik(self) -> float:
        return -sum(self.kernel.node_nll(j) for j in range(self.ds.p))

    @property
    def stall_count(self) -> int:
        return int(self.stats[1])

    # -- penalty level ---------------------------------------------------

    def lambda_max(self) -> float:
        """Smallest penalty at which every coefficient group stays at zero.

        Evaluated at the current intercepts with all coefficients zero
        (call on a fresh solver).
        """
        if np.any(self.B != 0.0):
            raise ValueError("lambda_max is defined at zero coefficients")
        best = 0.0
        p = self.ds.p
        for j in range(p):
            for i in range(p):
                if i == j:
                    continue
                w = self.W[j, i]
                if w <= 0:
                    raise ValueError(f"weight w[{j},{i}] must be positive")
                g = self.kernel.group_grad(j, i)
                best = max(best, float(np.sqrt((g ** 2).sum())) / w)
        return best

    def kkt_audit(self) -> tuple[float, float]:
        """Worst optimality residuals at the current iterate and penalty.

        Returns ``(zero, active)``: for zero groups whose edge could be added
        without breaking mutual exclusion or acyclicity, the largest
        ``||grad|| - lam*w``; for nonzero groups, the largest
        ``||grad - lam*w*beta/||beta||||``.
        """
        zero_res, active_res = -math.inf, 0.0
        p = self.ds.p
        g = self.graph()
        for j in range(p):
            for i in range(p):
                if i == j:
                    continue
                grad = np.asarray(self.kernel.group_grad(j, i))
                rj, di = self.r[j], self.r[i] - 1
                beta = self.B[j, i, :rj, :di]
                nb = float(np.sqrt((beta ** 2).sum()))
                lw = self.lam * self.W[j, i]
                if nb > 0.0:
                    res = float(np.linalg.norm(grad - lw * beta / nb))
                    active_res = max(active_res, res)
                elif not self.adj[j, i] and not g.has_path(j, i):
                    zero_res = max(zero_res, float(np.linalg.norm(grad)) - lw)
        return zero_res, active_res

    def set_lambda(self, lam: float) -> None:
        if lam < 0:
            raise ValueError("lambda must be non-negative")
        self.lam = float(lam)
        self.kernel.lam = self.lam

    def refresh_curvature(self) -> None:
        """Recompute and freeze every curvature bound at the current iterate."""
        self.kernel.refresh_eta()
        self.kernel.hessian_bounds(self.cfg.b)

    # -- loops -----------------------------------------------------------

    def _check(self, before: float, where: str) -> float:
        after = self.objective()
        if after > before + 1e-9 * (1.0 + abs(before)):
            raise InvariantError(f"objective increased during {where}: {before!r} -> {after!r}")
        nz = np.any(self.B != 0.0, axis=(2, 3))
        if np.any(nz & nz.T):
            raise InvariantError(f"both directions of a pair active after {where}")
        topological_sort(DagStructure.from_adjacency(nz.T.astype(np.int8)))
        for j in range(self.ds.p):
            rj = self.r[j]
            if np.abs(self.B[j, :, :rj, :].sum(axis=1)).max(initial=0.0) > 1e-8:
                raise InvariantError(f"group sum-to-zero constraint broken after {where}")
            if self.B0[j, 0] != 0.0:
                raise InvariantError("reference intercept moved")
        return after

    def pair_sweep(self) -> None:
        pairs = self._pairs
        if self.cfg.pair_order == "random":
            pairs = np.ascontiguousarray(pairs[self._rng.permutation(len(pairs))])
        if self.cfg.check_invariants:
            f = self.objective()
            for i, j in pairs:
                self.kernel.pair_update(int(i), int(j))
                f = self._check(f, f"pair update ({i}, {j})")
        else:
            self.kernel.pair_sweep(pairs)

    def intercept_pass(self) -> float:
        f = self.objective() if self.cfg.check_invariants else None
        mx = self.kernel.intercept_pass()
        if f is not None:
            self._check(f, "intercept update")
        return mx

    def inner_loop(self, groups=None) -> tuple[int, bool]:
        """Cycle over a fixed set of groups (default: the active set) to tolerance."""
        groups = self.active_groups() if groups is None else np.ascontiguousarray(groups, dtype=np.intc)
        check = self.cfg.check_invariants
        for it in range(1, self.cfg.max_inner + 1):
            f = self.objective() if check else None
            change = self.kernel.inner_pass(groups)
            if check:
                self._check(f, "inner loop")
            if self.cfg.trace:
                self.trace.append((self.lam, self._sweep_no, it, self.objective(), change,
                                   int(self.adj.sum())))
            if change < self.cfg.inner_tol:
                return it, True
        return self.cfg.max_inner, False

    def solve(self, lam: float) -> SolveResult:
        """Minimize the penalized objective at ``lam`` from the current iterate.

        Each outer iteration is a pair sweep, an intercept pass and an inner
        loop. The run stops once an iteration leaves the active set produced
        by the previous inner loop unchanged, so at least two sweeps are made.
        """
        self.set_lambda(lam)
        self.refresh_curvature()
        stalls0 = int(self.stats[1])
        # the reference active set must come from an inner loop at this lambda
        prev = None
        converged = False
        passes, inner_ok = 0, True
        sweep = 0
        for sweep in range(1, self.cfg.max_outer + 1):
            self._sweep_no = sweep
            if self.cfg.trace:
                before = self.B.copy(), self.B0.copy()
            self.pair_sweep()
            self.intercept_pass()
            if self.cfg.trace:
                jump = max(np.abs(self.B - before[0]).max(initial=0.0),
                           np.abs(self.B0 - before[1]).max(initial=0.0))
                self.trace.append((self.lam, sweep, 0, self.objective(), float(jump),
                                   int(self.adj.sum())))
            n_it, inner_ok = self.inner_loop()
            passes += n_it
            if prev is not None and np.array_equal(prev, self.adj):
                converged = True
                break
            prev = self.adj.copy()
        if not converged:
            log.warning("active set still changing after %d outer sweeps at lambda=%.6g",
                        self.cfg.max_outer, lam)
        return SolveResult(self.lam, sweep, converged, passes, inner_ok,
                           int(self.stats[1]) - stalls0)


def inner_loop(beta: ParamVector, ds: CategoricalDataset, cfg: SolverConfig,
               pen: PenaltyConfig, active) -> tuple[ParamVector, bool]:
    """Minimize the penalized objective over the groups in ``active`` only.

    ``active`` lists edges ``(i, j)`` meaning ``i -> j`` (group ``beta_{j.i}``).
    Curvature bounds are taken at ``beta``.
    """
    solver = CDSolver(ds, pen.weights, cfg, beta)
    solver.set_lambda(pen.lam)
    solver.refresh_curvature()
    groups = np.array([(j, i) for i, j in active], dtype=np.intc).reshape(-1, 2)
    topological_sort(DagStructure(ds.p, active, check=False))
    _, ok = solver.inner_loop(groups)
    return solver.params(), ok


def outer_sweep(beta: ParamVector, ds: CategoricalDataset, cfg: SolverConfig,
                pen: PenaltyConfig) -> tuple[ParamVector, DagStructure]:
    """Full blockwise coordinate descent at ``pen.lam`` from ``beta``."""
    solver = CDSolver(ds, pen.weights, cfg, beta)
    solver.solve(pen.lam)
    return solver.params(), solver.graph()
