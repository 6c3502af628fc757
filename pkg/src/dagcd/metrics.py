"""Structural scoring of an estimated DAG against the true one.

Counts follow the usual structure-learning conventions:

* ``P``  predicted edges,
* ``E``  expected edges (in the true skeleton, correct direction),
* ``R``  reversed edges (in the true skeleton, wrong direction),
* ``M``  true edges missed entirely,
* ``FP`` predicted edges whose pair is not adjacent in the truth.

In skeleton mode reversed edges are counted as expected and ``R = 0``.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from fractions import Fraction
from pathlib import Path
from typing import Iterable, Sequence

from .graph import DagStructure, skeleton

__all__ = ["EvalReport", "score_dag", "score_skeleton", "aggregate", "write_report_csv",
           "REPORT_COLUMNS"]

REPORT_COLUMNS = ("P", "E", "R", "M", "FP", "TPR", "FDR")


@dataclass(frozen=True)
class EvalReport:
    P: int
    E: int
    R: int
    M: int
    FP: int
    T: int
    mode: str = "dag"

    def __post_init__(self):
        if self.mode not in ("dag", "skeleton"):
            raise ValueError(f"unknown mode {self.mode!r}")
        if min(self.P, self.E, self.R, self.M, self.FP, self.T) < 0:
            raise ValueError("counts must be non-negative")

    @property
    def tpr_exact(self) -> Fraction:
        return Fraction(self.E, self.T) if self.T else Fraction(0)

    @property
    def fdr_exact(self) -> Fraction:
        # no predictions, no false discoveries
        return Fraction(self.R + self.FP, self.P) if self.P else Fraction(0)

    @property
    def TPR(self) -> float:
        return float(self.tpr_exact)

    @property
    def FDR(self) -> float:
        return float(self.fdr_exact)

    def as_row(self) -> dict:
        row = {k: getattr(self, k) for k in REPORT_COLUMNS}
        row["mode"] = self.mode
        return row


def _check(truth: DagStructure, est: DagStructure) -> None:
    if truth.p != est.p:
        raise ValueError(f"node-count mismatch: truth has {truth.p}, estimate has {est.p}")


def score_dag(truth: DagStructure, est: DagStructure) -> EvalReport:
    """Directed comparison: reversed edges count against FDR."""
    _check(truth, est)
    true_edges = truth.edges
    E = R = FP = 0
    for i, j in est.edges:
        if (i, j) in true_edges:
            E += 1
        elif (j, i) in true_edges:
            R += 1
        else:
            FP += 1
    T = len(true_edges)
    return EvalReport(P=E + R + FP, E=E, R=R, M=T - E - R, FP=FP, T=T, mode="dag")


def score_skeleton(truth: DagStructure, est: DagStructure) -> EvalReport:
    """Undirected comparison of the two skeletons."""
    _check(truth, est)
    st, se = skeleton(truth), skeleton(est)
    E = len(st & se)
    T = len(st)
    return EvalReport(P=len(se), E=E, R=0, M=T - E, FP=len(se) - E, T=T, mode="skeleton")


def aggregate(reports: Sequence[EvalReport]) -> dict[str, tuple[float, float]]:
    """Mean and sample standard deviation of every numeric field.

    A single report yields SD 0.
    """
    reports = list(reports)
    if not reports:
        raise ValueError("cannot aggregate an empty list of reports")
    modes = {r.mode for r in reports}
    if len(modes) > 1:
        raise ValueError(f"mixed report modes {sorted(modes)}")
    out = {}
    for key in REPORT_COLUMNS + ("T",):
        vals = [float(getattr(r, key)) for r in reports]
        mean = math.fsum(vals) / len(vals)
        if len(vals) > 1:
            sd = math.sqrt(math.fsum((v - mean) ** 2 for v in vals) / (len(vals) - 1))
        else:
            sd = 0.0
        out[key] = (mean, sd)
    return out


def write_report_csv(path, rows: Iterable[tuple[str, str, EvalReport]],
                     summaries: Iterable[tuple[str, str, str, dict]] = ()) -> None:
    """Write per-dataset rows and aggregate summary rows.

    ``rows`` holds ``(dataset, config, report)``; ``summaries`` holds
    ``(cell, config, mode, aggregate(...))``. Summary cells use ``mean(sd)``.
    """
    header = ["dataset", "config", "mode", *REPORT_COLUMNS]
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for name, config, rep in rows:
            w.writerow([name, config, rep.mode, rep.P, rep.E, rep.R, rep.M, rep.FP,
                        f"{rep.TPR:.6f}", f"{rep.FDR:.6f}"])
        for name, config, mode, agg in summaries:
            cells = [f"{agg[k][0]:.3f}({agg[k][1]:.3f})" for k in REPORT_COLUMNS]
            w.writerow([name, config, mode, *cells])
