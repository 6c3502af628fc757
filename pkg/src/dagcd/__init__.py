"""Adaptive group-Lasso structure learning for categorical Bayesian networks.

Causal DAGs over discrete variables are estimated from a mix of
observational and interventional data by blockwise coordinate descent on
a penalized multi-logit likelihood.
"""
from .dataset import CategoricalDataset, DatasetError, load_csv, save_csv, save_interventions
from .graph import CycleError, DagStructure, read_edge_list, skeleton, topological_sort, write_edge_list
from .metrics import EvalReport, aggregate, score_dag, score_skeleton
from .multilogit import ParamVector, PenaltyConfig, loglik, penalized_objective
from .path import (
    PathConfig,
    SolutionPath,
    adaptive_weights,
    fit_adaptive,
    fit_path,
    lambda_max,
    match_edge_count,
    refit_mle,
    select_model,
)
from .simulate import GraphSpec, SampleSpec, generate_graph, sample_data
from .solver import CDSolver, SolverConfig

__version__ = "0.1.0"

__all__ = [
    "CategoricalDataset",
    "DatasetError",
    "load_csv",
    "save_csv",
    "save_interventions",
    "CycleError",
    "DagStructure",
    "read_edge_list",
    "write_edge_list",
    "skeleton",
    "topological_sort",
    "EvalReport",
    "score_dag",
    "score_skeleton",
    "aggregate",
    "ParamVector",
    "PenaltyConfig",
    "loglik",
    "penalized_objective",
    "PathConfig",
    "SolutionPath",
    "adaptive_weights",
    "fit_adaptive",
    "fit_path",
    "lambda_max",
    "match_edge_count",
    "refit_mle",
    "select_model",
    "GraphSpec",
    "SampleSpec",
    "generate_graph",
    "sample_data",
    "CDSolver",
    "SolverConfig",
]
