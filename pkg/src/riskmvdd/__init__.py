"""Risk stratification and phenotyping toolkit built on multi-valued decision diagrams.

The package derives ordinal risk classes from patient cohorts by clustering,
trains decision diagrams that keep predicting when measurements are missing,
renders a human-readable phenotype for every prediction, and benchmarks the
models with per-class ROC analysis, calibration tables, and DeLong tests.
"""

__version__ = "0.1.0"
