"""Configuration, synthetic data, reports and the command-line interface."""

from __future__ import annotations

from .config import ExperimentSpec, MetricSpec, ModelSpec, RunConfig
from .pipeline import (
    FitReport,
    IdentificationRun,
    ValidationResult,
    fit_reports,
    generate_synthetic_experiment,
    identify_parameters,
    noise_coefficients,
    run_validation,
)
from .reports import DiagnosticsReport, diagnostics_schema, emit_reports

__all__ = [
    "DiagnosticsReport",
    "ExperimentSpec",
    "FitReport",
    "IdentificationRun",
    "MetricSpec",
    "ModelSpec",
    "RunConfig",
    "ValidationResult",
    "diagnostics_schema",
    "emit_reports",
    "fit_reports",
    "generate_synthetic_experiment",
    "identify_parameters",
    "noise_coefficients",
    "run_validation",
]
