"""Command-line entry point: ``dagcd simulate|fit|select|evaluate|bench``.

Every option can also come from a JSON file given with ``--config``; flags
on the command line take precedence. Runs are deterministic given the
seed and write a manifest with everything needed to repeat them.
"""
from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict
from pathlib import Path

import numpy as np

from . import __version__
from .dataset import load_csv, save_csv, save_interventions
from .graph import DagStructure, read_edge_list, to_dot, write_edge_list
from .kernels import DEFAULT_BACKEND
from .metrics import EvalReport, aggregate, score_dag, score_skeleton, write_report_csv
from .path import (
    PathConfig,
    fit_adaptive,
    match_edge_count,
    select_model,
    write_path_csv,
    write_path_edges,
)
from .simulate import FAMILIES, GraphSpec, SampleSpec, generate_graph, sample_data
from .solver import SolverConfig

log = logging.getLogger("dagcd")

FORMAT_VERSION = 1
EXIT_FLAGGED = 3  # stalls, unstable active sets or failed replicates

# option name -> default; None means "not set"
DEFAULTS = {
    "family": "scalefree",
    "p": 50,
    "n_per_block": None,
    "n_obs": None,
    "effect_size": 2.0,
    "rewire_prob": 0.1,
    "grid_size": 30,
    "grid_ratio": 0.1,
    "gamma": 1.0,
    "alpha_select": 0.1,
    "match_edges": None,
    "entry": None,
    "seed": 0,
    "replicates": 20,
    "threads": None,
    "trace": False,
    "backend": None,
    "data": None,
    "interventions": None,
    "truth": None,
    "estimate": None,
    "fit_dir": None,
    "mode": "both",
    "out": None,
}


# ----------------------------------------------------------------------
# configuration


def _resolve(args: argparse.Namespace) -> dict:
    """Defaults, then the JSON config, then explicit flags."""
    cfg = dict(DEFAULTS)
    if args.config:
        with open(args.config) as fh:
            loaded = json.load(fh)
        unknown = set(loaded) - set(DEFAULTS)
        if unknown:
            raise SystemExit(f"unknown config keys: {', '.join(sorted(unknown))}")
        cfg.update(loaded)
    for key in DEFAULTS:
        val = getattr(args, key, None)
        if val is not None and val is not False:
            cfg[key] = val
    if cfg["threads"] is None:
        cfg["threads"] = int(os.environ.get("DAGCD_THREADS", "1"))
    if cfg["threads"] < 1:
        raise SystemExit("--threads must be at least 1")
    return cfg


def _path_cfg(cfg: dict) -> PathConfig:
    return PathConfig(J=int(cfg["grid_size"]), ratio=float(cfg["grid_ratio"]),
                      gamma=float(cfg["gamma"]), alpha_select=float(cfg["alpha_select"]))


def _solver_cfg(cfg: dict) -> SolverConfig:
    return SolverConfig(trace=bool(cfg["trace"]), backend=cfg["backend"])


def _sample_spec(cfg: dict, seed: int) -> SampleSpec:
    n_pb, n_obs = cfg["n_per_block"], cfg["n_obs"]
    if n_pb is None and n_obs is None:
        n_pb = 5
    return SampleSpec(n_per_block=n_pb, n_obs=n_obs, effect_size=float(cfg["effect_size"]), seed=seed)


def replicate_seeds(root: int, k: int) -> tuple[int, int]:
    """Graph and sample seeds of replicate ``k``, independent of the replicate count."""
    ss = np.random.SeedSequence(root, spawn_key=(k,))
    g, s = (int(c.generate_state(1, dtype=np.uint64)[0]) for c in ss.spawn(2))
    return g, s


def _write_json(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


def _manifest(command: str, cfg: dict, **extra) -> dict:
    out = {
        "command": command,
        "config": {k: cfg[k] for k in sorted(cfg) if k != "out"},
        "version": __version__,
        "format_version": FORMAT_VERSION,
        "backend": cfg["backend"] or DEFAULT_BACKEND,
        "numpy": np.__version__,
    }
    out.update(extra)
    return out


def _outdir(cfg: dict, fallback: str) -> Path:
    out = Path(cfg["out"] or fallback)
    out.mkdir(parents=True, exist_ok=True)
    return out


# ----------------------------------------------------------------------
# simulate


def cmd_simulate(cfg: dict) -> int:
    out = _outdir(cfg, "sim")
    gseed, sseed = replicate_seeds(int(cfg["seed"]), 0)
    gspec = GraphSpec(cfg["family"], int(cfg["p"]), seed=gseed, rewire_prob=float(cfg["rewire_prob"]))
    g = generate_graph(gspec)
    ds = sample_data(g, _sample_spec(cfg, sseed))
    save_csv(ds, out / "data.csv")
    save_interventions(ds, out / "interventions.csv")
    write_edge_list(g, out / "truth.edges")
    _write_json(out / "manifest.json", _manifest(
        "simulate", cfg, family=gspec.family, p=gspec.p, s0=len(g), n=ds.n,
        seeds={"root": int(cfg["seed"]), "graph": gseed, "sample": sseed},
        files=["data.csv", "interventions.csv", "truth.edges"]))
    print(f"wrote {ds.n} x {ds.p} dataset and {len(g)}-edge graph to {out}")
    return 0


# ----------------------------------------------------------------------
# fit / select


def _write_trace(path: Path, traces: dict) -> None:
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["stage", "lambda", "sweep", "iteration", "objective", "max_change", "edges"])
        for stage, rows in traces.items():
            for lam, sweep, it, obj, change, edges in rows:
                w.writerow([stage, repr(lam), sweep, it, repr(obj), repr(change), edges])


def _write_selected(out: Path, g: DagStructure) -> None:
    write_edge_list(g, out / "selected.edges")
    (out / "selected.dot").write_text(to_dot(g))


def cmd_fit(cfg: dict) -> int:
    if not cfg["data"]:
        raise SystemExit("fit needs --data")
    ds = load_csv(cfg["data"], cfg["interventions"])
    out = _outdir(cfg, "fit")
    pcfg, scfg = _path_cfg(cfg), _solver_cfg(cfg)
    res = fit_adaptive(ds, pcfg, scfg)
    write_path_csv(res.pilot, res.pilot_selection, out / "pilot_path.csv")
    write_path_csv(res.path, res.selection, out / "path.csv")
    write_path_edges(res.path, out / "path_edges.csv")
    _write_selected(out, res.selected.graph)
    files = ["pilot_path.csv", "path.csv", "path_edges.csv", "selected.edges", "selected.dot"]
    if scfg.trace:
        _write_trace(out / "trace.csv", {"pilot": res.pilot.trace, "final": res.path.trace})
        files.append("trace.csv")
    unstable = [m + 1 for m, e in enumerate(res.path.entries) if not e.result.converged]
    _write_json(out / "manifest.json", _manifest(
        "fit", cfg, n=ds.n, p=ds.p, path=asdict(pcfg),
        solver={k: v for k, v in asdict(scfg).items() if k != "trace"},
        selected_entry=res.selection.index + 1, selected_edges=res.selected.edges,
        degenerate_path=res.selection.degenerate, stalls=res.stalls,
        unstable_entries=unstable, files=files))
    print(f"selected entry {res.selection.index + 1} of {len(res.path)} "
          f"with {res.selected.edges} edges; artifacts in {out}")
    if res.stalls or not res.converged:
        log.error("fit flagged: %d line-search stall(s), active set stable: %s",
                  res.stalls, res.converged)
        return EXIT_FLAGGED
    return 0


def _read_path(fit_dir: Path):
    edges, ll = [], []
    with (fit_dir / "path.csv").open(newline="") as fh:
        for row in csv.DictReader(fh):
            edges.append(int(row["edges"]))
            ll.append(float(row["refit_loglik"]))
    p = int(json.loads((fit_dir / "manifest.json").read_text())["p"])
    graphs = [DagStructure(p) for _ in edges]
    with (fit_dir / "path_edges.csv").open(newline="") as fh:
        for row in csv.DictReader(fh):
            graphs[int(row["m"]) - 1].add_edge(int(row["from"]) - 1, int(row["to"]) - 1, check=False)
    return np.array(edges), np.array(ll), graphs


def cmd_select(cfg: dict) -> int:
    if not cfg["fit_dir"]:
        raise SystemExit("select needs --fit-dir")
    fit_dir = Path(cfg["fit_dir"])
    edges, ll, graphs = _read_path(fit_dir)
    if cfg["entry"] is not None:
        m = int(cfg["entry"]) - 1
        if not 0 <= m < len(graphs):
            raise SystemExit(f"--entry must lie in 1..{len(graphs)}")
        how = "entry"
    elif cfg["match_edges"] is not None:
        m = match_edge_count(edges, int(cfg["match_edges"]))
        how = f"closest to {cfg['match_edges']} edges"
    else:
        sel = select_model((edges, ll), float(cfg["alpha_select"]))
        m = sel.index
        how = f"alpha={cfg['alpha_select']}" + (" (degenerate path)" if sel.degenerate else "")
    out = _outdir(cfg, str(fit_dir))
    _write_selected(out, graphs[m])
    print(f"selected entry {m + 1} ({how}) with {len(graphs[m])} edges")
    return 0


# ----------------------------------------------------------------------
# evaluate


def _print_report(label: str, rep: EvalReport) -> None:
    print(f"{label:9s} P={rep.P} E={rep.E} R={rep.R} M={rep.M} FP={rep.FP} "
          f"TPR={rep.TPR:.4f} FDR={rep.FDR:.4f}")


def cmd_evaluate(cfg: dict) -> int:
    if not (cfg["truth"] and cfg["estimate"]):
        raise SystemExit("evaluate needs --truth and --estimate")
    truth = read_edge_list(cfg["truth"])
    est = read_edge_list(cfg["estimate"], p=truth.p)
    reports = []
    if cfg["mode"] in ("dag", "both"):
        reports.append(score_dag(truth, est))
    if cfg["mode"] in ("skeleton", "both"):
        reports.append(score_skeleton(truth, est))
    for rep in reports:
        _print_report(rep.mode, rep)
    if cfg["out"]:
        write_report_csv(cfg["out"], [(Path(cfg["estimate"]).name, "", r) for r in reports])
    return 0


# ----------------------------------------------------------------------
# bench


def _replicate(job: dict) -> dict:
    """One simulated dataset, fitted and scored; never raises."""
    k, cfg = job["k"], job["cfg"]
    gseed, sseed = replicate_seeds(int(cfg["seed"]), k)
    rec = {"k": k, "graph_seed": gseed, "sample_seed": sseed, "ok": False}
    try:
        t0 = time.perf_counter()
        g = generate_graph(GraphSpec(job["family"], int(cfg["p"]), seed=gseed,
                                     rewire_prob=float(cfg["rewire_prob"])))
        ds = sample_data(g, _sample_spec(cfg, sseed))
        res = fit_adaptive(ds, _path_cfg(cfg), _solver_cfg(cfg))
        est = res.selected.graph
        rec.update(ok=True, n=ds.n, p=ds.p, s0=len(g), seconds=time.perf_counter() - t0,
                   stalls=res.stalls, converged=res.converged,
                   sweeps=max(e.result.sweeps for e in res.path.entries + res.pilot.entries),
                   dag=score_dag(g, est), skeleton=score_skeleton(g, est))
        if cfg["match_edges"] is not None:
            m = match_edge_count(res.path, int(cfg["match_edges"]))
            rec["matched"] = score_dag(g, res.path[m].graph)
            rec["matched_skeleton"] = score_skeleton(g, res.path[m].graph)
    except Exception as exc:  # recorded, the cell is marked incomplete
        rec["error"] = f"{type(exc).__name__}: {exc}"
    return rec


def run_bench(cfg: dict) -> tuple[list[dict], int]:
    families = [f.strip() for f in str(cfg["family"]).split(",") if f.strip()]
    for f in families:
        if f not in FAMILIES:
            raise SystemExit(f"unknown family {f!r}")
    jobs = [{"family": f, "k": k, "cfg": cfg} for f in families for k in range(int(cfg["replicates"]))]
    if cfg["threads"] > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=cfg["threads"]) as pool:
            recs = list(pool.map(_replicate, jobs))
    else:
        recs = [_replicate(j) for j in jobs]
    for job, rec in zip(jobs, recs):
        rec["family"] = job["family"]
    flagged = any(not r["ok"] or r["stalls"] or not r["converged"] for r in recs)
    return recs, EXIT_FLAGGED if flagged else 0


_TABLE_HEADER = ["graph", "n_p_s0", "method", "P", "E", "R", "FP", "TPR", "FDR", "complete"]


def _table_rows(recs: list[dict], key: str, method: str) -> list[list]:
    rows = []
    for fam in dict.fromkeys(r["family"] for r in recs):
        cell = [r for r in recs if r["family"] == fam]
        good = [r[key] for r in cell if r["ok"] and key in r]
        if not good:
            rows.append([fam, "", method, "", "", "", "", "", "", 0])
            continue
        ex = next(r for r in cell if r["ok"])
        agg = aggregate(good)
        rows.append([fam, f"({ex['n']}, {ex['p']}, {ex['s0']})",
                     method, *(f"{agg[c][0]:.1f}" for c in ("P", "E", "R", "FP")),
                     f"{agg['TPR'][0]:.3f}({agg['TPR'][1]:.3f})",
                     f"{agg['FDR'][0]:.3f}({agg['FDR'][1]:.3f})",
                     int(len(good) == len(cell))])
    return rows


def cmd_bench(cfg: dict) -> int:
    out = _outdir(cfg, "bench")
    recs, code = run_bench(cfg)
    with (out / "replicates.csv").open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["family", "replicate", "graph_seed", "sample_seed", "ok", "stalls", "converged",
                    "max_sweeps", "P", "E", "R", "FP", "TPR", "FDR", "skel_TPR", "skel_FDR", "error"])
        for r in recs:
            if r["ok"]:
                d, s = r["dag"], r["skeleton"]
                w.writerow([r["family"], r["k"] + 1, r["graph_seed"], r["sample_seed"], 1, r["stalls"],
                            int(r["converged"]), r["sweeps"], d.P, d.E, d.R, d.FP,
                            f"{d.TPR:.6f}", f"{d.FDR:.6f}", f"{s.TPR:.6f}", f"{s.FDR:.6f}", ""])
            else:
                w.writerow([r["family"], r["k"] + 1, r["graph_seed"], r["sample_seed"], 0,
                            "", "", "", "", "", "", "", "", "", "", "", r["error"]])
    tables = {"table_dag.csv": [("dag", "CD")], "table_skeleton.csv": [("skeleton", "CD")]}
    if cfg["match_edges"] is not None:
        tables["table_dag.csv"].append(("matched", "CD*"))
        tables["table_skeleton.csv"].append(("matched_skeleton", "CD*"))
    for name, specs in tables.items():
        with (out / name).open("w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(_TABLE_HEADER)
            for key, method in specs:
                w.writerows(_table_rows(recs, key, method))
    _write_json(out / "manifest.json", _manifest(
        "bench", cfg, replicates=[{k: r[k] for k in ("family", "k", "graph_seed", "sample_seed", "ok")}
                                  for r in recs],
        files=["replicates.csv", *tables]))
    with (out / "table_dag.csv").open() as fh:
        sys.stdout.write(fh.read())
    return code


# ----------------------------------------------------------------------
# argument parsing


def build_parser() -> argparse.ArgumentParser:
    top = argparse.ArgumentParser(prog="dagcd", description=__doc__.splitlines()[0])
    top.add_argument("--version", action="version", version=f"dagcd {__version__}")
    top.add_argument("-v", "--verbose", action="count", default=0)
    sub = top.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", help="JSON file with option values; flags override it")
        p.add_argument("--out", help="output directory (file for evaluate)")
        p.add_argument("--seed", type=int)

    def sim_opts(p):
        p.add_argument("--family", help=f"one of {', '.join(FAMILIES)}")
        p.add_argument("--p", type=int)
        g = p.add_mutually_exclusive_group()
        g.add_argument("--n-per-block", type=int, dest="n_per_block")
        g.add_argument("--n-obs", type=int, dest="n_obs")
        p.add_argument("--effect-size", type=float, dest="effect_size")
        p.add_argument("--rewire-prob", type=float, dest="rewire_prob")

    def fit_opts(p):
        p.add_argument("--grid-size", type=int, dest="grid_size")
        p.add_argument("--grid-ratio", type=float, dest="grid_ratio")
        p.add_argument("--gamma", type=float)
        p.add_argument("--alpha-select", type=float, dest="alpha_select")
        p.add_argument("--backend", choices=["cython", "python"])
        p.add_argument("--trace", action="store_true", help="record per-iteration convergence trace")

    p = sub.add_parser("simulate", help="draw a benchmark graph and sample data from it")
    common(p)
    sim_opts(p)

    p = sub.add_parser("fit", help="fit the pilot and adaptive paths and select a DAG")
    common(p)
    p.add_argument("--data", help="dataset CSV (1-based levels)")
    p.add_argument("--interventions", help="row_index,node_index CSV (1-based)")
    fit_opts(p)

    p = sub.add_parser("select", help="re-select a DAG from a fitted path")
    common(p)
    p.add_argument("--fit-dir", dest="fit_dir", help="directory written by 'fit'")
    g = p.add_mutually_exclusive_group()
    g.add_argument("--alpha-select", type=float, dest="alpha_select")
    g.add_argument("--match-edges", type=int, dest="match_edges")
    g.add_argument("--entry", type=int, help="1-based path entry")

    p = sub.add_parser("evaluate", help="score an estimated edge list against the truth")
    common(p)
    p.add_argument("--truth")
    p.add_argument("--estimate")
    p.add_argument("--mode", choices=["dag", "skeleton", "both"])

    p = sub.add_parser("bench", help="replicated simulate-fit-score runs")
    common(p)
    sim_opts(p)
    fit_opts(p)
    p.add_argument("--replicates", type=int)
    p.add_argument("--threads", type=int, help="worker processes (default: $DAGCD_THREADS or 1)")
    p.add_argument("--match-edges", type=int, dest="match_edges",
                   help="also report the path entry closest to this edge count")
    return top


COMMANDS = {"simulate": cmd_simulate, "fit": cmd_fit, "select": cmd_select,
            "evaluate": cmd_evaluate, "bench": cmd_bench}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2),
                        format="%(levelname)s %(name)s: %(message)s")
    cfg = _resolve(args)
    try:
        return COMMANDS[args.command](cfg)
    except (ValueError, OSError) as exc:
        log.error("%s", exc)
        return 2


if __name__ == "__main__":
    sys.exit(main())
