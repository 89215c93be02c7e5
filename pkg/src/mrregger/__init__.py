"""Debiased and rerandomized Egger estimators for two-sample summary-data
Mendelian randomization, with selection, simulation and GWAS ingestion."""

from .core import MRError, SnpSummary, SummaryDataset, strength_diagnostics, validate_dataset
from .estimators import (
    EstimateReport,
    Method,
    degger,
    divw,
    egger,
    estimate,
    ivw,
    regger,
    rivw,
)
from .selection import SelectionConfig, pvalue_to_lambda, select_fixed, select_random

__version__ = "0.1.0"

__all__ = [
    "EstimateReport", "MRError", "Method", "SelectionConfig", "SnpSummary", "SummaryDataset",
    "degger", "divw", "egger", "estimate", "ivw", "pvalue_to_lambda", "regger", "rivw",
    "select_fixed", "select_random", "strength_diagnostics", "validate_dataset", "__version__",
]
