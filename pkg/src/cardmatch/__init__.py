"""Cardinality matching: largest balanced matched samples, optimal pairing, diagnostics and inference."""
from .config import StudySpec, parse_spec, spec_from_dict
from .data import Dataset, build_strata, load_dataset, make_dataset, standardize
from .diagnostics import balance_report, export_love_plot, smd
from .inference import mcnemar_test, paired_mean_difference, two_proportion_ztest
from .pairing import distance_matrix, pair_within_strata
from .problem import compile_problem, derive_target_profile, verify_solution
from .simplex import solve_lp
from .solver import branch_and_bound, enumerate_oracle, round_heuristic

__version__ = "0.1.0"

__all__ = [
    "Dataset", "StudySpec", "balance_report", "branch_and_bound", "build_strata", "compile_problem",
    "derive_target_profile", "distance_matrix", "enumerate_oracle", "export_love_plot", "load_dataset",
    "make_dataset", "mcnemar_test", "pair_within_strata", "paired_mean_difference", "parse_spec",
    "round_heuristic", "smd", "solve_lp", "spec_from_dict", "standardize", "two_proportion_ztest",
    "verify_solution",
]
