"""Text sentiment and demand estimation (Python bindings)."""

from ._core import (
    Error,
    StaleDependency,
    fit_counts,
    gen_poisson_panel,
    preprocess,
    run_in_memory,
    run_stage,
    validate,
)

__all__ = [
    "Error",
    "StaleDependency",
    "fit_counts",
    "gen_poisson_panel",
    "preprocess",
    "run_in_memory",
    "run_stage",
    "validate",
]
