"""Ratcheting simulation, parameter identification and error sensitivity.

Submodules: :mod:`tensors`, :mod:`constitutive`, :mod:`program`,
:mod:`simulator` (with the :mod:`kernel` integrator and the
:mod:`reference` ODE cross-check), :mod:`identify`, :mod:`sensitivity`
and :mod:`workbench`.
"""

from __future__ import annotations

from .constitutive import ElasticThermalParams, MaterialParams, ModelFamily, ModelKind, NewRule, Voce
from .errors import (
    ConfigError,
    DegenerateDirectionError,
    InadmissibleStateError,
    IntegrationError,
    RankDeficiencyError,
    RatchetError,
)
from .program import LoadingProgram, StageDurations, make_experiment_program, make_metric_program
from .simulator import ExperimentRecord, SimulationTrace, SolverOptions, integrate, simulate_record

__version__ = "0.1.0"

__all__ = [
    "ConfigError",
    "DegenerateDirectionError",
    "ElasticThermalParams",
    "ExperimentRecord",
    "InadmissibleStateError",
    "IntegrationError",
    "LoadingProgram",
    "MaterialParams",
    "ModelFamily",
    "ModelKind",
    "NewRule",
    "RankDeficiencyError",
    "RatchetError",
    "SimulationTrace",
    "SolverOptions",
    "StageDurations",
    "Voce",
    "integrate",
    "make_experiment_program",
    "make_metric_program",
    "simulate_record",
]
