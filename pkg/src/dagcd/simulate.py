"""Benchmark graph families and categorical data sampling."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .dataset import CategoricalDataset
from .graph import DagStructure, topological_sort
from .multilogit import ParamVector

__all__ = [
    "FAMILIES",
    "GraphSpec",
    "SampleSpec",
    "generate_graph",
    "sample_data",
    "generator_params",
    "expected_edges",
]

FAMILIES = ("bipartite", "polytree", "scalefree", "smallworld")


@dataclass(frozen=True)
class GraphSpec:
    family: str
    p: int
    seed: int = 0
    rewire_prob: float = 0.1
    relabel: bool = True

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise ValueError(f"unknown family {self.family!r}; choose from {FAMILIES}")
        if self.family in ("bipartite", "polytree"):
            if self.p < 10 or self.p % 5:
                raise ValueError(f"{self.family} needs p >= 10 and divisible by 5")
        elif self.p < 5:
            raise ValueError(f"{self.family} needs p >= 5")
        if not 0.0 <= self.rewire_prob <= 1.0:
            raise ValueError("rewire_prob must lie in [0, 1]")


@dataclass(frozen=True)
class SampleSpec:
    """Either ``n_per_block`` interventional rows per node or ``n_obs`` observational rows."""

    n_per_block: int | None = None
    n_obs: int | None = None
    effect_size: float = 2.0
    seed: int = 0

    def __post_init__(self):
        if (self.n_per_block is None) == (self.n_obs is None):
            raise ValueError("give exactly one of n_per_block and n_obs")
        if (self.n_per_block or 0) < 0 or (self.n_obs or 0) < 0:
            raise ValueError("sample sizes must be non-negative")


def expected_edges(family: str, p: int) -> int:
    return {"bipartite": p, "polytree": p - 1, "scalefree": p - 1, "smallworld": 2 * p}[family]


def _bipartite(p, rng):
    top = p // 5
    cells = rng.choice(top * (p - top), size=p, replace=False)
    return [(int(c // (p - top)), top + int(c % (p - top))) for c in cells]


def _random_binary_tree(nodes, rng):
    # each new node hangs under a random node that still has a free child slot
    edges = []
    open_slots = [nodes[0], nodes[0]]
    for v in nodes[1:]:
        k = int(rng.integers(len(open_slots)))
        parent = open_slots.pop(k)
        edges.append((parent, v))
        open_slots += [v, v]
    return edges


def _polytree(p, rng):
    m = p // 5
    trees = [list(range(t * m, (t + 1) * m)) for t in range(5)]
    edges = []
    for nodes in trees:
        edges += _random_binary_tree(nodes, rng)
    for t in range(4):
        a = int(rng.choice(trees[t]))
        b = int(rng.choice(trees[t + 1]))
        edges.append((a, b) if rng.random() < 0.5 else (b, a))
    return edges


def _scalefree(p, rng):
    edges = [(0, 1)]
    degree = np.zeros(p)
    degree[:2] = 1
    for v in range(2, p):
        target = int(rng.choice(v, p=degree[:v] / degree[:v].sum()))
        edges.append((target, v))
        degree[target] += 1
        degree[v] += 1
    return edges


def _smallworld(p, rng, rewire_prob, nei=2):
    und = set()
    for u in range(p):
        for k in range(1, nei + 1):
            und.add(frozenset((u, (u + k) % p)))
    lattice = sorted(tuple(sorted(e)) for e in und)
    current = set(und)
    for u, v in lattice:
        if rng.random() >= rewire_prob:
            continue
        free = [w for w in range(p) if w != u and frozenset((u, w)) not in current]
        if not free:
            continue
        w = int(rng.choice(free))
        current.discard(frozenset((u, v)))
        current.add(frozenset((u, w)))
    order = rng.permutation(p)
    rank = np.empty(p, dtype=int)
    rank[order] = np.arange(p)
    return [(a, b) if rank[a] < rank[b] else (b, a) for a, b in (tuple(e) for e in current)]


def generate_graph(spec: GraphSpec) -> DagStructure:
    """Draw a DAG from one of the four benchmark families.

    Node labels are randomly permuted afterwards (``relabel=True``) so the
    index order carries no information about the causal order.
    """
    rng = np.random.default_rng(spec.seed)
    p = spec.p
    if spec.family == "bipartite":
        edges = _bipartite(p, rng)
    elif spec.family == "polytree":
        edges = _polytree(p, rng)
    elif spec.family == "scalefree":
        edges = _scalefree(p, rng)
    else:
        edges = _smallworld(p, rng, spec.rewire_prob)
    if spec.relabel:
        perm = rng.permutation(p)
        edges = [(int(perm[a]), int(perm[b])) for a, b in edges]
    g = DagStructure(p, edges, check=False)
    topological_sort(g)
    return g


def generator_params(g: DagStructure, effect_size: float = 2.0) -> ParamVector:
    """Binary multi-logit parameters of the sampling law.

    ``P(X_j = l | parents) ∝ exp(effect * #{parents at level l})``, written
    with ``beta_{j10} = 0`` and sum-to-zero coefficient groups.
    """
    beta = ParamVector.zeros(np.full(g.p, 2))
    for j in range(g.p):
        pa = g.parents(j)
        for i in pa:
            beta.coef[j, i, :, 0] = (-effect_size, effect_size)
        beta.intercept[j] = (0.0, -effect_size * len(pa))
    return beta


def sample_data(g: DagStructure, spec: SampleSpec) -> CategoricalDataset:
    """Ancestral sampling of binary data, optionally in intervention blocks.

    In interventional mode block ``j`` holds ``n_per_block`` rows in which
    node ``j`` is set uniformly at random regardless of its parents.
    """
    rng = np.random.default_rng(spec.seed)
    p = g.p
    if spec.n_per_block is not None:
        n = p * spec.n_per_block
        target = np.repeat(np.arange(p), spec.n_per_block)
    else:
        n = spec.n_obs
        target = np.full(n, -1)
    values = np.zeros((n, p), dtype=np.int64)
    for j in topological_sort(g):
        pa = sorted(g.parents(j))
        if pa:
            at_two = (values[:, pa] == 2).sum(axis=1)
            at_one = len(pa) - at_two
            logit = spec.effect_size * (at_two - at_one)
            prob2 = 1.0 / (1.0 + np.exp(-logit))
        else:
            prob2 = np.full(n, 0.5)
        fixed = target == j
        prob2 = np.where(fixed, 0.5, prob2)
        values[:, j] = 1 + (rng.random(n) < prob2)
    rows = tuple(np.flatnonzero(target == j) for j in range(p))
    return CategoricalDataset(values, np.full(p, 2), rows)
