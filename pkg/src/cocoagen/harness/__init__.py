from __future__ import annotations

from .plan import ExperimentPlan, load_plan
from .report import ReportTable, emit_csv
from .studies import (
    bound_coverage_check,
    empirical_mse,
    mc_average_check,
    median_of_means,
    run_experiment,
)

__all__ = [
    "ExperimentPlan",
    "ReportTable",
    "bound_coverage_check",
    "emit_csv",
    "empirical_mse",
    "load_plan",
    "mc_average_check",
    "median_of_means",
    "run_experiment",
]
