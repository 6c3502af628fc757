"""Multi-logit conditional model: parameters, likelihood, gradient, curvature.

The functions here work on the dense dummy encoding and are written for
clarity. The solver runs on the index-based kernels in ``dagcd.kernels``;
the two are cross-checked in the test suite.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import logsumexp

from .dataset import CategoricalDataset, DummyEncoding, encode
from .graph import DagStructure

__all__ = [
    "ParamVector",
    "PenaltyConfig",
    "probabilities",
    "block_loglik",
    "loglik",
    "penalized_objective",
    "block_gradient",
    "hessian_bound",
    "DEFAULT_B",
]

DEFAULT_B = 1e-3


class ParamVector:
    """Coefficient groups ``beta_{j.i}`` and intercept groups ``beta_{j.0}``.

    Storage is padded: ``coef[j, i, l, k]`` is component ``k`` of
    ``beta_{j l i}`` for ``l < r_j`` and ``k < r_i - 1``; ``intercept[j, l]``
    is ``beta_{j l 0}``. Entries outside a node's level range stay zero.
    """

    def __init__(self, levels, coef=None, intercept=None):
        self.levels = np.asarray(levels, dtype=np.int64)
        p = self.levels.shape[0]
        R = int(self.levels.max()) if p else 2
        D = R - 1
        self.coef = np.zeros((p, p, R, D)) if coef is None else np.array(coef, dtype=float)
        self.intercept = np.zeros((p, R)) if intercept is None else np.array(intercept, dtype=float)
        if self.coef.shape != (p, p, R, D) or self.intercept.shape != (p, R):
            raise ValueError("parameter arrays do not match the level counts")

    @classmethod
    def zeros(cls, levels) -> "ParamVector":
        return cls(levels)

    @property
    def p(self) -> int:
        return self.levels.shape[0]

    def copy(self) -> "ParamVector":
        return ParamVector(self.levels, self.coef, self.intercept)

    def group(self, j: int, i: int) -> np.ndarray:
        """``beta_{j.i}`` flattened as ``r_j`` stacked sub-blocks of length ``d_i``."""
        if i == j:
            raise ValueError("beta_{j.j} is structurally zero")
        return self.coef[j, i, : self.levels[j], : self.levels[i] - 1].ravel().copy()

    def set_group(self, j: int, i: int, value) -> None:
        if i == j:
            raise ValueError("beta_{j.j} is structurally zero")
        rj, di = self.levels[j], self.levels[i] - 1
        self.coef[j, i, :rj, :di] = np.asarray(value, dtype=float).reshape(rj, di)

    def intercepts(self, j: int) -> np.ndarray:
        return self.intercept[j, : self.levels[j]].copy()

    def set_intercepts(self, j: int, value) -> None:
        self.intercept[j, : self.levels[j]] = value

    def group_norms(self) -> np.ndarray:
        """``(p, p)`` matrix of ``||beta_{j.i}||_2``."""
        return np.sqrt((self.coef ** 2).sum(axis=(2, 3)))

    def graph(self) -> DagStructure:
        """Graph induced by the nonzero groups: ``i -> j`` iff ``beta_{j.i} != 0``."""
        nz = np.any(self.coef != 0, axis=(2, 3))
        return DagStructure(self.p, ((i, j) for j, i in zip(*np.nonzero(nz))), check=False)

    def node_matrix(self, j: int, enc: DummyEncoding) -> np.ndarray:
        """``(r_j, d)`` matrix whose row ``l`` is ``beta_{j l .}`` in encoding layout."""
        rj = self.levels[j]
        out = np.zeros((rj, enc.d))
        out[:, 0] = self.intercept[j, :rj]
        for i in range(self.p):
            if i != j:
                out[:, enc.segment(i)] = self.coef[j, i, :rj, : self.levels[i] - 1]
        return out


@dataclass
class PenaltyConfig:
    lam: float
    weights: np.ndarray

    def __post_init__(self):
        self.weights = np.asarray(self.weights, dtype=float)
        if self.lam < 0:
            raise ValueError("lambda must be non-negative")
        if np.any(self.weights < 0):
            raise ValueError("weights must be non-negative")
        off = ~np.eye(self.weights.shape[0], dtype=bool)
        if not np.allclose(self.weights[off], self.weights.T[off]):
            raise ValueError("weight matrix must be symmetric")

    @classmethod
    def unit(cls, p: int, lam: float) -> "PenaltyConfig":
        return cls(lam, np.ones((p, p)) - np.eye(p))


def _softmax(z: np.ndarray) -> np.ndarray:
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def probabilities(beta: ParamVector, x, j: int, enc: DummyEncoding | None = None) -> np.ndarray:
    """Conditional law of node ``j`` given a dummy row ``x`` (length ``d``).

    ``enc`` supplies the segment layout; by default it is derived from
    ``beta.levels``.
    """
    if enc is None:
        offsets = np.concatenate([[1], 1 + np.cumsum(beta.levels - 1)])
        enc = DummyEncoding(np.zeros((0, int(offsets[-1])), dtype=np.uint8), offsets)
    eta = beta.node_matrix(j, enc) @ np.asarray(x, dtype=float)
    return _softmax(eta)


def _node_terms(beta: ParamVector, ds: CategoricalDataset, j: int, enc: DummyEncoding):
    rows = ds.observational_rows(j)
    x = enc.matrix[rows].astype(float)
    eta = x @ beta.node_matrix(j, enc).T
    y = ds.values[rows, j] - 1
    return rows, x, eta, y


def block_loglik(beta: ParamVector, ds: CategoricalDataset, j: int, enc=None) -> float:
    """``l_j``: log-likelihood of node ``j`` over its observational rows."""
    enc = enc or encode(ds)
    rows, x, eta, y = _node_terms(beta, ds, j, enc)
    if rows.size == 0:
        return 0.0
    return float(eta[np.arange(rows.size), y].sum() - logsumexp(eta, axis=1).sum())


def loglik(beta: ParamVector, ds: CategoricalDataset, enc=None) -> float:
    enc = enc or encode(ds)
    return sum(block_loglik(beta, ds, j, enc) for j in range(ds.p))


def penalized_objective(beta: ParamVector, ds: CategoricalDataset, cfg: PenaltyConfig, enc=None) -> float:
    norms = beta.group_norms()
    np.fill_diagonal(norms, 0.0)
    return -loglik(beta, ds, enc) + cfg.lam * float((cfg.weights * norms).sum())


def block_gradient(beta: ParamVector, ds: CategoricalDataset, j: int, i: int, enc=None) -> np.ndarray:
    """Gradient of ``l_j`` with respect to ``beta_{j.i}``; ``i=None`` means the intercepts."""
    enc = enc or encode(ds)
    rows, x, eta, y = _node_terms(beta, ds, j, enc)
    rj = ds.levels[j]
    resid = np.eye(rj)[y] - _softmax(eta) if rows.size else np.zeros((0, rj))
    if i is None:
        return resid.sum(axis=0)
    xi = x[:, enc.segment(i)]
    return (resid.T @ xi).ravel()


def hessian_bound(beta: ParamVector, ds: CategoricalDataset, j: int, i, b: float = DEFAULT_B, enc=None) -> float:
    """``-max(max diag(-H), b)`` over the coordinates of group ``(j, i)``.

    The diagonal entry for coordinate ``(l, k)`` is
    ``sum_h p_jl (1 - p_jl) x_{h,i,k}^2``; ``i=None`` selects the intercepts.
    """
    if b <= 0:
        raise ValueError("b must be positive")
    enc = enc or encode(ds)
    rows, x, eta, y = _node_terms(beta, ds, j, enc)
    if rows.size == 0:
        return -b
    prob = _softmax(eta)
    w = prob * (1.0 - prob)
    xi = np.ones((rows.size, 1)) if i is None else x[:, enc.segment(i)]
    diag = w.T @ (xi ** 2)
    return -max(float(diag.max()), b)
