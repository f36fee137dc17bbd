"""Quadratic assignment solver based on a rank-one exact penalty over a
low-rank factorization of the lifted doubly nonnegative relaxation."""

from .instance import (
    LiftedCost,
    Permutation,
    QapInstance,
    bundled_instance,
    load_dat,
    objective,
    parse_dat,
    parse_sln,
    preprocess,
)
from .assignment import hungarian, permut_proj
from .epalm import EpalmConfig, SolveReport, epalm1_solve, epalm_solve, extract_solution
from .localsearch import local_search

__all__ = [
    "LiftedCost", "Permutation", "QapInstance", "bundled_instance", "load_dat", "objective",
    "parse_dat", "parse_sln", "preprocess", "hungarian", "permut_proj", "EpalmConfig",
    "SolveReport", "epalm_solve", "epalm1_solve", "extract_solution", "local_search",
]
