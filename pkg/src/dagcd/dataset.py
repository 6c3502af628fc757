"""Categorical data container, CSV I/O and dummy encoding.

Levels are stored 1-based (``1..r_j``), exactly as they appear on disk.
Rows and nodes are 0-based in memory and 1-based in files.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

__all__ = [
    "CategoricalDataset",
    "DatasetError",
    "DummyEncoding",
    "load_csv",
    "save_csv",
    "save_interventions",
    "encode",
    "indicator",
]

LEVELS_DIRECTIVE = "#levels:"


class DatasetError(ValueError):
    """Raised for malformed data or intervention files."""


@dataclass(frozen=True)
class CategoricalDataset:
    """An ``n x p`` matrix of level indices with intervention bookkeeping.

    Parameters
    ----------
    values : ndarray of int, shape (n, p)
        ``values[h, j]`` is the level of node ``j`` in row ``h``, in ``1..levels[j]``.
    levels : ndarray of int, shape (p,)
        Number of levels ``r_j`` of every node (each at least 2).
    intervention_rows : tuple of ndarray
        ``intervention_rows[j]`` holds the sorted row indices in which node ``j``
        was experimentally fixed.
    """

    values: np.ndarray
    levels: np.ndarray
    intervention_rows: tuple = field(default=())

    def __post_init__(self):
        values = np.ascontiguousarray(self.values, dtype=np.int64)
        if values.ndim != 2:
            raise DatasetError("values must be a 2-d array")
        n, p = values.shape
        levels = np.asarray(self.levels, dtype=np.int64).reshape(-1)
        if levels.shape[0] != p:
            raise DatasetError(f"expected {p} level counts, got {levels.shape[0]}")
        if np.any(levels < 2):
            raise DatasetError("every node needs at least 2 levels")
        if n and (np.any(values < 1) or np.any(values > levels[None, :])):
            h, j = np.argwhere((values < 1) | (values > levels[None, :]))[0]
            raise DatasetError(
                f"level out of range at row {h + 1}, column {j + 1}: {values[h, j]}"
            )

        rows = tuple(self.intervention_rows) or tuple(() for _ in range(p))
        if len(rows) != p:
            raise DatasetError(f"expected {p} intervention sets, got {len(rows)}")
        rows = tuple(np.unique(np.asarray(r, dtype=np.int64)) for r in rows)
        owner = np.full(n, -1, dtype=np.int64)
        for j, r in enumerate(rows):
            if r.size and (r[0] < 0 or r[-1] >= n):
                raise DatasetError(f"intervention row out of range for node {j + 1}")
            clash = r[owner[r] >= 0]
            if clash.size:
                raise DatasetError(
                    f"row {clash[0] + 1} is assigned to more than one intervened node"
                )
            owner[r] = j

        values.setflags(write=False)
        levels.setflags(write=False)
        for r in rows:
            r.setflags(write=False)
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "levels", levels)
        object.__setattr__(self, "intervention_rows", rows)

    @property
    def n(self) -> int:
        return self.values.shape[0]

    @property
    def p(self) -> int:
        return self.values.shape[1]

    def observational_mask(self) -> np.ndarray:
        """Boolean ``(p, n)`` array; entry ``[j, h]`` is True iff ``h`` is in ``O_j``."""
        mask = np.ones((self.p, self.n), dtype=bool)
        for j, r in enumerate(self.intervention_rows):
            mask[j, r] = False
        return mask

    def observational_rows(self, j: int) -> np.ndarray:
        return np.flatnonzero(self.observational_mask()[j])

    @property
    def is_observational(self) -> bool:
        return all(r.size == 0 for r in self.intervention_rows)


def _parse_int(cell: str, lineno: int, col: int) -> int:
    try:
        return int(cell.strip())
    except ValueError:
        raise DatasetError(
            f"non-integer cell {cell!r} at line {lineno}, column {col}"
        ) from None


def load_csv(path, intervention_spec=None) -> CategoricalDataset:
    """Read a comma-separated integer matrix and an optional intervention file.

    An optional first line ``#levels: r1,...,rp`` declares the level counts;
    otherwise they are the column maxima (at least 2). The intervention file
    holds ``row_index,node_index`` pairs (1-based, a header line is allowed).
    """
    path = Path(path)
    declared = None
    rows = []
    with path.open(newline="") as fh:
        for lineno, line in enumerate(fh, start=1):
            text = line.strip()
            if not text:
                continue
            if text.startswith(LEVELS_DIRECTIVE):
                declared = [
                    _parse_int(c, lineno, k + 1)
                    for k, c in enumerate(text[len(LEVELS_DIRECTIVE):].split(","))
                ]
                continue
            if text.startswith("#"):
                continue
            rows.append([_parse_int(c, lineno, k + 1) for k, c in enumerate(text.split(","))])

    if not rows:
        raise DatasetError(f"{path} contains no data rows")
    width = len(rows[0])
    if any(len(r) != width for r in rows):
        raise DatasetError(f"{path} is not rectangular")
    values = np.array(rows, dtype=np.int64)
    if np.any(values < 1):
        raise DatasetError("level out of range: levels are 1-based")
    if declared is not None:
        if len(declared) != width:
            raise DatasetError("#levels directive does not match the column count")
        levels = np.array(declared, dtype=np.int64)
        if np.any(values > levels[None, :]):
            raise DatasetError("level out of range: value above declared level count")
    else:
        levels = np.maximum(values.max(axis=0), 2)

    intervention_rows = tuple([] for _ in range(width))
    if intervention_spec is not None:
        intervention_rows = _read_interventions(Path(intervention_spec), values.shape)
    return CategoricalDataset(values, levels, intervention_rows)


def _read_interventions(path: Path, shape) -> tuple:
    n, p = shape
    out = [[] for _ in range(p)]
    seen = {}
    with path.open(newline="") as fh:
        for lineno, rec in enumerate(csv.reader(fh), start=1):
            if not rec or not "".join(rec).strip() or rec[0].lstrip().startswith("#"):
                continue
            if lineno == 1 and not rec[0].strip().lstrip("-").isdigit():
                continue  # header
            if len(rec) != 2:
                raise DatasetError(f"{path}:{lineno}: expected 'row_index,node_index'")
            h = _parse_int(rec[0], lineno, 1)
            j = _parse_int(rec[1], lineno, 2)
            if not (1 <= h <= n and 1 <= j <= p):
                raise DatasetError(f"{path}:{lineno}: index out of range")
            if h in seen and seen[h] != j:
                raise DatasetError(
                    f"row {h} is assigned to more than one intervened node"
                )
            seen[h] = j
            out[j - 1].append(h - 1)
    return tuple(out)


def save_csv(ds: CategoricalDataset, path, declare_levels: bool = True) -> None:
    path = Path(path)
    with path.open("w", newline="") as fh:
        if declare_levels:
            fh.write(LEVELS_DIRECTIVE + " " + ",".join(str(int(r)) for r in ds.levels) + "\n")
        for row in ds.values:
            fh.write(",".join(str(int(v)) for v in row) + "\n")


def save_interventions(ds: CategoricalDataset, path) -> None:
    pairs = sorted((int(h), j) for j, rows in enumerate(ds.intervention_rows) for h in rows)
    with Path(path).open("w", newline="") as fh:
        fh.write("row_index,node_index\n")
        for h, j in pairs:
            fh.write(f"{h + 1},{j + 1}\n")


@dataclass(frozen=True)
class DummyEncoding:
    """Rows ``x_h = (1, x_{h,1}, ..., x_{h,p})`` of the reference-cell encoding.

    ``offsets[i]:offsets[i + 1]`` is the segment of node ``i`` (length
    ``r_i - 1``); column 0 is the constant.
    """

    matrix: np.ndarray
    offsets: np.ndarray

    def segment(self, i: int) -> slice:
        return slice(int(self.offsets[i]), int(self.offsets[i + 1]))

    @property
    def d(self) -> int:
        return self.matrix.shape[1]

    def decode(self) -> np.ndarray:
        """Recover the 1-based level matrix."""
        p = self.offsets.shape[0] - 1
        out = np.ones((self.matrix.shape[0], p), dtype=np.int64)
        for i in range(p):
            seg = self.matrix[:, self.segment(i)]
            hit = seg.any(axis=1)
            out[hit, i] = seg[hit].argmax(axis=1) + 2
        return out


def encode(ds: CategoricalDataset) -> DummyEncoding:
    """Reference-cell dummy encoding; level 1 maps to an all-zero segment."""
    dims = ds.levels - 1
    offsets = np.concatenate([[1], 1 + np.cumsum(dims)]).astype(np.int64)
    mat = np.zeros((ds.n, int(offsets[-1])), dtype=np.uint8)
    mat[:, 0] = 1
    rows = np.arange(ds.n)
    for i in range(ds.p):
        lev = ds.values[:, i]
        hit = lev >= 2
        mat[rows[hit], offsets[i] + lev[hit] - 2] = 1
    return DummyEncoding(mat, offsets)


def indicator(ds: CategoricalDataset, h: int, j: int, level: int) -> int:
    """``I(X_hj = level)`` with a 1-based level."""
    if not 1 <= level <= ds.levels[j]:
        raise DatasetError(f"level {level} outside 1..{ds.levels[j]}")
    return int(ds.values[h, j] == level)
