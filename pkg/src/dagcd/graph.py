"""Directed acyclic graph structure, cycle checks and text formats."""
from __future__ import annotations

import heapq
from collections import deque
from pathlib import Path
from typing import Iterable

import numpy as np

__all__ = [
    "CycleError",
    "DagStructure",
    "induces_cycle",
    "topological_sort",
    "skeleton",
    "read_edge_list",
    "write_edge_list",
    "to_dot",
]


class CycleError(ValueError):
    pass


class DagStructure:
    """Directed graph on nodes ``0..p-1``; edge ``(i, j)`` means ``i -> j``.

    Children and parents are both indexed so that reachability searches
    run over out-edges only.
    """

    def __init__(self, p: int, edges: Iterable[tuple[int, int]] = (), check: bool = True):
        if p < 0:
            raise ValueError("p must be non-negative")
        self.p = int(p)
        self._children = [set() for _ in range(self.p)]
        self._parents = [set() for _ in range(self.p)]
        for i, j in edges:
            self.add_edge(int(i), int(j), check=check)

    @classmethod
    def from_adjacency(cls, adj) -> "DagStructure":
        adj = np.asarray(adj)
        g = cls(adj.shape[0])
        for i, j in zip(*np.nonzero(adj)):
            g.add_edge(int(i), int(j), check=False)
        topological_sort(g)
        return g

    @property
    def edges(self) -> set[tuple[int, int]]:
        return {(i, j) for i in range(self.p) for j in self._children[i]}

    def sorted_edges(self) -> list[tuple[int, int]]:
        return sorted(self.edges)

    def __len__(self) -> int:
        return sum(len(c) for c in self._children)

    def __contains__(self, edge) -> bool:
        i, j = edge
        return j in self._children[i]

    def __eq__(self, other) -> bool:
        return isinstance(other, DagStructure) and self.p == other.p and self.edges == other.edges

    def __repr__(self) -> str:
        return f"DagStructure(p={self.p}, edges={self.sorted_edges()})"

    def parents(self, j: int) -> set[int]:
        return set(self._parents[j])

    def children(self, i: int) -> set[int]:
        return set(self._children[i])

    def _check_nodes(self, i: int, j: int) -> None:
        if not (0 <= i < self.p and 0 <= j < self.p):
            raise IndexError(f"edge ({i}, {j}) outside 0..{self.p - 1}")
        if i == j:
            raise ValueError(f"self-loop on node {i}")

    def add_edge(self, i: int, j: int, check: bool = True) -> None:
        self._check_nodes(i, j)
        if j in self._children[i]:
            return
        if check and (i in self._children[j] or induces_cycle(self, (i, j))):
            raise CycleError(f"adding {i} -> {j} creates a cycle")
        self._children[i].add(j)
        self._parents[j].add(i)

    def remove_edge(self, i: int, j: int) -> None:
        self._children[i].discard(j)
        self._parents[j].discard(i)

    def has_path(self, src: int, dst: int) -> bool:
        """Breadth-first reachability over directed edges."""
        if src == dst:
            return True
        seen = {src}
        queue = deque([src])
        while queue:
            u = queue.popleft()
            for v in self._children[u]:
                if v == dst:
                    return True
                if v not in seen:
                    seen.add(v)
                    queue.append(v)
        return False

    def adjacency(self) -> np.ndarray:
        adj = np.zeros((self.p, self.p), dtype=np.int8)
        for i, j in self.edges:
            adj[i, j] = 1
        return adj

    def copy(self) -> "DagStructure":
        return DagStructure(self.p, self.edges, check=False)


def induces_cycle(g: DagStructure, candidate: tuple[int, int]) -> bool:
    """True iff adding ``i -> j`` to ``g`` closes a directed cycle (path ``j ~> i``)."""
    i, j = candidate
    if i == j:
        raise ValueError("candidate edge is a self-loop")
    return g.has_path(j, i)


def topological_sort(g: DagStructure) -> list[int]:
    """Kahn's algorithm, lowest index first among ready nodes."""
    indeg = [len(g._parents[j]) for j in range(g.p)]
    ready = [j for j in range(g.p) if indeg[j] == 0]
    heapq.heapify(ready)
    order = []
    while ready:
        u = heapq.heappop(ready)
        order.append(u)
        for v in g._children[u]:
            indeg[v] -= 1
            if indeg[v] == 0:
                heapq.heappush(ready, v)
    if len(order) != g.p:
        raise CycleError("graph contains a directed cycle")
    return order


def skeleton(g: DagStructure) -> set[frozenset]:
    return {frozenset(e) for e in g.edges}


def write_edge_list(g: DagStructure, path) -> None:
    """One ``i j`` line per edge, 1-based, preceded by a ``# p=`` comment."""
    with Path(path).open("w") as fh:
        fh.write(f"# p={g.p}\n")
        for i, j in g.sorted_edges():
            fh.write(f"{i + 1} {j + 1}\n")


def read_edge_list(path, p: int | None = None) -> DagStructure:
    edges = []
    declared = None
    with Path(path).open() as fh:
        for line in fh:
            text = line.strip()
            if not text:
                continue
            if text.startswith("#"):
                if text[1:].strip().startswith("p="):
                    declared = int(text[1:].strip()[2:])
                continue
            a, b = text.replace(",", " ").split()[:2]
            edges.append((int(a) - 1, int(b) - 1))
    if p is None:
        p = declared
    if p is None:
        p = 1 + max((max(e) for e in edges), default=-1)
    return DagStructure(p, edges)


def to_dot(g: DagStructure, name: str = "G", labels=None) -> str:
    names = labels or [f"X{k + 1}" for k in range(g.p)]
    lines = [f"digraph {name} {{"]
    lines += [f'  {k} [label="{names[k]}"];' for k in range(g.p)]
    lines += [f"  {i} -> {j};" for i, j in g.sorted_edges()]
    lines.append("}")
    return "\n".join(lines) + "\n"
