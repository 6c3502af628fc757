"""Solution paths over a decreasing penalty grid and model selection.

The path starts at the smallest penalty that keeps every group at zero and
descends log-linearly, each fit warm-starting the next. Every entry is
refitted without penalty on its own structure; the refit log-likelihoods
feed the difference-ratio selection rule.
"""
from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy.special import logsumexp, softmax

from .dataset import CategoricalDataset
from .graph import DagStructure
from .multilogit import ParamVector
from .solver import CDSolver, SolveResult, SolverConfig

__all__ = [
    "PathConfig",
    "PathEntry",
    "SolutionPath",
    "Selection",
    "W_MAX",
    "RIDGE",
    "lambda_max",
    "lambda_grid",
    "fit_path",
    "refit_mle",
    "RefitCache",
    "weights_from_pilot",
    "adaptive_weights",
    "difference_ratios",
    "select_model",
    "match_edge_count",
    "write_path_csv",
    "write_path_edges",
    "AdaptiveFit",
    "fit_adaptive",
]

log = logging.getLogger(__name__)

W_MAX = 1e12
RIDGE = 1e-6


@dataclass(frozen=True)
class PathConfig:
    J: int = 30
    ratio: float = 0.1
    gamma: float = 1.0
    alpha_select: float = 0.1
    warm_start: bool = True
    refit: bool = True

    def __post_init__(self):
        if self.J < 2:
            raise ValueError("grid size J must be at least 2")
        if not 0.0 < self.ratio < 1.0:
            raise ValueError("grid ratio must lie in (0, 1)")
        if not self.gamma > 0.0:
            raise ValueError("gamma must be positive")
        if not 0.0 < self.alpha_select <= 1.0:
            raise ValueError("alpha_select must lie in (0, 1]")


@dataclass
class PathEntry:
    lam: float
    params: ParamVector
    graph: DagStructure
    objective: float
    result: SolveResult
    refit_loglik: float = math.nan
    refit_converged: bool = True

    @property
    def edges(self) -> int:
        return len(self.graph)

    @property
    def stalled(self) -> bool:
        return self.result.stalls > 0


@dataclass
class SolutionPath:
    entries: list[PathEntry]
    weights: np.ndarray
    trace: list[tuple] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.entries)

    def __getitem__(self, m: int) -> PathEntry:
        return self.entries[m]

    @property
    def lambdas(self) -> np.ndarray:
        return np.array([e.lam for e in self.entries])

    @property
    def edge_counts(self) -> np.ndarray:
        return np.array([e.edges for e in self.entries], dtype=int)

    @property
    def refit_logliks(self) -> np.ndarray:
        return np.array([e.refit_loglik for e in self.entries])

    @property
    def stalls(self) -> int:
        return sum(e.result.stalls for e in self.entries)

    @property
    def converged(self) -> bool:
        """Every entry reached a stable active set."""
        return all(e.result.converged for e in self.entries)


# ----------------------------------------------------------------------
# penalty grid


def lambda_max(ds: CategoricalDataset, weights, cfg: SolverConfig | None = None) -> float:
    """Smallest penalty at which the all-zero coefficient vector is optimal.

    Gradients are taken at zero coefficients with intercepts at their
    intercept-only MLEs; a node that is constant on its observational rows
    contributes nothing.
    """
    return CDSolver(ds, weights, cfg).lambda_max()


def lambda_grid(lam1: float, J: int, ratio: float) -> np.ndarray:
    """``J`` log-spaced values from ``lam1`` down to exactly ``ratio * lam1``."""
    if not lam1 > 0.0:
        raise ValueError("the largest penalty must be positive")
    grid = lam1 * ratio ** (np.arange(J) / (J - 1))
    grid[0], grid[-1] = lam1, lam1 * ratio
    return grid


# ----------------------------------------------------------------------
# unpenalized refits


def _newton_logit(Z: np.ndarray, y: np.ndarray, r: int, ridge: float,
                  max_iter: int = 100, tol: float = 1e-10):
    """Reference-cell multinomial logit by damped Newton.

    Returns ``(theta, loglik, converged)`` with ``theta`` of shape
    ``(q, r - 1)``; level 0 is the reference.
    """
    n, q = Z.shape
    K = r - 1
    Y = np.zeros((n, r))
    Y[np.arange(n), y] = 1.0

    def nll(theta):
        full = np.hstack([np.zeros((n, 1)), Z @ theta])
        return float((logsumexp(full, axis=1) - full[np.arange(n), y]).sum())

    theta = np.zeros((q, K))
    cur = nll(theta) + 0.5 * ridge * float((theta ** 2).sum())
    ok = False
    for _ in range(max_iter):
        full = np.hstack([np.zeros((n, 1)), Z @ theta])
        P = softmax(full, axis=1)[:, 1:]
        grad = Z.T @ (P - Y[:, 1:]) + ridge * theta
        # Hessian blocks Z' diag(P_k (delta_kl - P_l)) Z, ordered (k, a)
        Wt = P[:, :, None] * (np.eye(K)[None] - P[:, None, :])
        H = np.einsum("na,nkl,nb->kalb", Z, Wt, Z).reshape(K * q, K * q)
        H += ridge * np.eye(K * q)
        step = np.linalg.solve(H, grad.T.ravel()).reshape(K, q).T
        if np.abs(grad).max() < tol or np.abs(step).max() < tol:
            ok = True
            break
        t = 1.0
        while t > 1e-10:
            trial = theta - t * step
            val = nll(trial) + 0.5 * ridge * float((trial ** 2).sum())
            # slack for rounding once the decrease drops below machine resolution
            if val <= cur + 1e-13 * max(1.0, abs(cur)):
                break
            t *= 0.5
        else:
            ok = True  # no further decrease is representable
            break
        theta, cur = trial, val
    return theta, -nll(theta), ok


class RefitCache(dict):
    """Per-node refits keyed by ``(j, parents)``; structures along a path repeat a lot."""


def refit_mle(ds: CategoricalDataset, g: DagStructure, ridge: float = RIDGE,
              cache: RefitCache | None = None) -> tuple[ParamVector, float, bool]:
    """Unpenalized multi-logit fit of every node on its parents in ``g``.

    Node ``j`` is fitted on its observational rows with a small ridge term
    so that quasi-separated data still yield finite estimates.

    Returns
    -------
    params : ParamVector
        In the symmetric parameterization (groups sum to zero over levels).
    loglik : float
        Unpenalized log-likelihood at ``params``.
    converged : bool
        False if any node hit the Newton iteration cap.
    """
    if g.p != ds.p:
        raise ValueError("graph and dataset disagree on p")
    cache = RefitCache() if cache is None else cache
    beta = ParamVector.zeros(ds.levels)
    mask = ds.observational_mask()
    total, all_ok = 0.0, True
    for j in range(ds.p):
        pa = tuple(sorted(g.parents(j)))
        key = (j, pa)
        if key not in cache:
            rows = np.flatnonzero(mask[j])
            rj = int(ds.levels[j])
            cols = [np.ones((rows.size, 1))]
            for i in pa:
                lev = ds.values[rows, i]
                cols.append((lev[:, None] == np.arange(2, ds.levels[i] + 1)[None, :]).astype(float))
            Z = np.hstack(cols)
            theta, ll, ok = _newton_logit(Z, ds.values[rows, j] - 1, rj, ridge)
            cache[key] = (theta, ll, ok)
        theta, ll, ok = cache[key]
        total += ll
        all_ok &= ok
        rj = int(ds.levels[j])
        full = np.vstack([np.zeros((1, theta.shape[0])), theta.T])  # (r_j, q)
        beta.intercept[j, :rj] = full[:, 0]
        off = 1
        for i in pa:
            d = int(ds.levels[i]) - 1
            block = full[:, off:off + d]
            beta.coef[j, i, :rj, :d] = block - block.mean(axis=0)
            off += d
    return beta, total, all_ok


# ----------------------------------------------------------------------
# the path


def fit_path(ds: CategoricalDataset, weights, cfg: PathConfig | None = None,
             solver_cfg: SolverConfig | None = None,
             cache: RefitCache | None = None) -> SolutionPath:
    """Fit the penalized estimator along the grid, warm-starting each value."""
    cfg = cfg or PathConfig()
    solver_cfg = solver_cfg or SolverConfig()
    W = np.array(weights, dtype=float)
    solver = CDSolver(ds, W, solver_cfg)
    lam1 = solver.lambda_max()
    if lam1 == 0.0:
        raise ValueError("every gradient vanishes at the empty model; no path to fit")
    grid = lambda_grid(lam1, cfg.J, cfg.ratio)
    cache = RefitCache() if cache is None else cache
    entries = []
    for lam in grid:
        if not cfg.warm_start:
            solver = CDSolver(ds, W, solver_cfg)
        res = solver.solve(float(lam))
        if res.stalls:
            log.warning("line search stalled %d time(s) at lambda=%.6g", res.stalls, lam)
        entry = PathEntry(float(lam), solver.params(), solver.graph(), solver.objective(), res)
        if cfg.refit:
            _, entry.refit_loglik, entry.refit_converged = refit_mle(ds, entry.graph, cache=cache)
        entries.append(entry)
    return SolutionPath(entries, W, solver.trace if cfg.warm_start else [])


# ----------------------------------------------------------------------
# adaptive weights


def weights_from_pilot(pilot: ParamVector, gamma: float = 1.0) -> np.ndarray:
    """``w_ji = w_ij = min(|b_ji|^-gamma, |b_ij|^-gamma)``, ``W_MAX`` if both are zero."""
    norms = pilot.group_norms()
    big = np.maximum(norms, norms.T)
    with np.errstate(divide="ignore"):
        W = np.where(big > 0.0, big ** -gamma, W_MAX)
    W = np.minimum(W, W_MAX)
    np.fill_diagonal(W, 0.0)
    return W


def adaptive_weights(ds: CategoricalDataset, cfg: PathConfig | None = None,
                     solver_cfg: SolverConfig | None = None,
                     return_pilot: bool = False):
    """Weights from the selected model of a unit-weight pilot path.

    With ``return_pilot=True`` the pilot path and its selection are
    returned as well.
    """
    cfg = cfg or PathConfig()
    unit = np.ones((ds.p, ds.p))
    pilot = fit_path(ds, unit, cfg, solver_cfg)
    sel = select_model(pilot, cfg.alpha_select)
    W = weights_from_pilot(pilot[sel.index].params, cfg.gamma)
    if return_pilot:
        return W, pilot, sel
    return W


# ----------------------------------------------------------------------
# selection


@dataclass(frozen=True)
class Selection:
    index: int  # 0-based position in the path
    dr: np.ndarray  # dr[m] relates entries m and m + 1; NaN where undefined
    threshold: float
    degenerate: bool = False


def difference_ratios(edges: Sequence[int], logliks: Sequence[float]) -> np.ndarray:
    """Log-likelihood gain per added edge between consecutive entries.

    When the edge count does not grow from ``m`` to ``m + 1`` the ratio is
    taken across the gap from the latest earlier entry with at least one
    edge fewer; with no such entry it is undefined (NaN).
    """
    e = np.asarray(edges, dtype=float)
    ll = np.asarray(logliks, dtype=float)
    out = np.full(max(e.size - 1, 0), np.nan)
    for m in range(e.size - 1):
        for k in range(m, -1, -1):
            de = e[m + 1] - e[k]
            if de >= 1:
                out[m] = (ll[m + 1] - ll[k]) / de
                break
    return out


def select_model(path, alpha_select: float = 0.1) -> Selection:
    """Last entry whose incoming difference ratio reaches ``alpha * max``.

    ``path`` is a :class:`SolutionPath` or a pair ``(edges, logliks)``.
    A path with no edge growth at all returns the first entry flagged as
    degenerate.
    """
    if isinstance(path, SolutionPath):
        edges, ll = path.edge_counts, path.refit_logliks
    else:
        edges, ll = path
    if len(edges) < 2:
        raise ValueError("selection needs at least two path entries")
    if not 0.0 < alpha_select <= 1.0:
        raise ValueError("alpha_select must lie in (0, 1]")
    dr = difference_ratios(edges, ll)
    if np.all(np.isnan(dr)):
        return Selection(0, dr, math.nan, degenerate=True)
    threshold = alpha_select * float(np.nanmax(dr))
    ok = np.flatnonzero(dr >= threshold)
    return Selection(int(ok[-1]) + 1, dr, threshold)


def match_edge_count(path, target: int) -> int:
    """Index of the entry whose edge count is closest to ``target`` (ties: fewer edges)."""
    edges = path.edge_counts if isinstance(path, SolutionPath) else np.asarray(path)
    if len(edges) == 0:
        raise ValueError("empty path")
    return min(range(len(edges)), key=lambda m: (abs(int(edges[m]) - target), int(edges[m]), m))


# ----------------------------------------------------------------------
# output


def write_path_csv(path: SolutionPath, sel: Selection | None, dest) -> None:
    """Per-entry summary; ``dr`` on row ``m`` is the ratio into entry ``m``."""
    with Path(dest).open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["m", "lambda", "edges", "penalized_objective", "refit_loglik", "dr",
                    "selected_flag"])
        for m, e in enumerate(path.entries):
            dr = "" if sel is None or m == 0 or math.isnan(sel.dr[m - 1]) else repr(float(sel.dr[m - 1]))
            flag = int(sel is not None and sel.index == m)
            w.writerow([m + 1, repr(e.lam), e.edges, repr(e.objective), repr(e.refit_loglik),
                        dr, flag])


def write_path_edges(path: SolutionPath, dest) -> None:
    """Long-format edge lists of every entry (1-based nodes)."""
    with Path(dest).open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["m", "from", "to"])
        for m, e in enumerate(path.entries):
            for i, j in e.graph.sorted_edges():
                w.writerow([m + 1, i + 1, j + 1])


# ----------------------------------------------------------------------
# end to end


@dataclass
class AdaptiveFit:
    pilot: SolutionPath
    pilot_selection: Selection
    weights: np.ndarray
    path: SolutionPath
    selection: Selection

    @property
    def selected(self) -> PathEntry:
        return self.path[self.selection.index]

    @property
    def stalls(self) -> int:
        return self.pilot.stalls + self.path.stalls

    @property
    def converged(self) -> bool:
        return self.pilot.converged and self.path.converged


def fit_adaptive(ds: CategoricalDataset, cfg: PathConfig | None = None,
                 solver_cfg: SolverConfig | None = None) -> AdaptiveFit:
    """Unit-weight pilot path, adaptive weights, final path and selection."""
    cfg = cfg or PathConfig()
    W, pilot, psel = adaptive_weights(ds, cfg, solver_cfg, return_pilot=True)
    path = fit_path(ds, W, cfg, solver_cfg)
    return AdaptiveFit(pilot, psel, W, path, select_model(path, cfg.alpha_select))
