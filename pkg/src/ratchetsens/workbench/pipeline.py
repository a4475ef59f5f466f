"""Synthetic data, identification runs and validation on held-out tests."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from ..constitutive import MaterialParams, params_to_dict
from ..identify import (
    IdentificationProblem,
    NestedOptions,
    ParameterLayout,
    RefineOptions,
    RefineResult,
    gauss_newton_refine,
    nested_identify,
)
from ..program import LoadingProgram
from ..sensitivity import NoiseModel, SobolConfig, box_muller, sobol_uniforms, synthesize_noise
from ..simulator import ExperimentRecord, SimulationTrace, SolverOptions, extract_extrema, integrate, simulate_record


def noise_coefficients(noise: NoiseModel, sobol: SobolConfig, draw: int = 0, column: int = 0) -> np.ndarray:
    """Mode amplitudes ``sigma * z[draw, column:column + n_modes]`` of one Sobol draw."""
    if column + noise.n_modes > sobol.dimensions:
        raise ValueError(f"columns {column}..{column + noise.n_modes - 1} exceed {sobol.dimensions} Sobol dimensions")
    z = box_muller(sobol_uniforms(sobol, draw + 1)[draw])
    return noise.sigma * z[column : column + noise.n_modes]


def generate_synthetic_experiment(
    p_true: MaterialParams,
    program: LoadingProgram,
    noise: NoiseModel | None = None,
    sobol: SobolConfig | None = None,
    draw: int = 0,
    column: int = 0,
    solver: SolverOptions = SolverOptions(),
) -> ExperimentRecord:
    """Simulate ``program`` with ``p_true`` and optionally add one noise draw.

    The noise is the sine-mode model with coefficients taken from row
    ``draw`` of the Sobol normals, starting at ``column``; tests that share
    a Sobol configuration should use disjoint column blocks.
    """
    clean = simulate_record(p_true, program, solver)
    meta = {"source": "synthetic", "p_true": params_to_dict(p_true)}
    if noise is None or noise.sigma == 0.0:
        return clean.with_vector(clean.vector(), **meta, noise_sigma=0.0)
    coeffs = noise_coefficients(noise, sobol or SobolConfig(dimensions=noise.n_modes), draw, column)
    noisy = clean.vector() + synthesize_noise(coeffs, clean)
    return clean.with_vector(
        noisy, **meta, noise_sigma=noise.sigma, noise_draw=draw, noise_column=column,
        noise_coefficients=[float(c) for c in coeffs],
    )


@dataclass(frozen=True, eq=False)
class ValidationResult:
    """Error functional on held-out tests; ``flagged`` when there were none."""

    phi: float
    n_tests: int
    flagged: bool = False

    def __float__(self) -> float:
        return self.phi


def run_validation(
    p_star,
    held_out: Sequence[tuple[LoadingProgram, ExperimentRecord]],
    layout: ParameterLayout | None = None,
    solver: SolverOptions = SolverOptions(),
) -> ValidationResult:
    """Evaluate the error functional of ``p_star`` on tests it was not fitted to."""
    if not held_out:
        return ValidationResult(0.0, 0, True)
    if isinstance(p_star, MaterialParams):
        layout = ParameterLayout.for_params(p_star)
        x = layout.values(p_star)
    else:
        if layout is None:
            raise ValueError("a layout is needed to interpret a raw parameter array")
        x = np.asarray(getattr(p_star, "values", p_star), dtype=float)
    problem = IdentificationProblem(held_out, layout, solver=solver)
    return ValidationResult(problem.phi(x), len(held_out))


@dataclass(frozen=True, eq=False)
class FitReport:
    """Data and model response of one test at the identified parameters."""

    name: str
    program: LoadingProgram
    record: ExperimentRecord
    model: ExperimentRecord
    trace: SimulationTrace

    @property
    def residual(self) -> np.ndarray:
        return self.record.vector() - self.model.vector()


def fit_reports(
    p: MaterialParams, tests: Sequence[tuple[str, LoadingProgram, ExperimentRecord]], solver: SolverOptions = SolverOptions()
) -> list[FitReport]:
    out = []
    for name, prog, rec in tests:
        trace = integrate(p, prog, solver)
        out.append(FitReport(name, prog, rec, extract_extrema(trace, prog), trace))
    return out


@dataclass(frozen=True, eq=False)
class IdentificationRun:
    params: MaterialParams
    layout: ParameterLayout
    problem: IdentificationProblem
    phi_start: float
    phi_nested: float | None
    refine: RefineResult
    n_evals: int = 0
    notes: dict = field(default_factory=dict)

    @property
    def x(self) -> np.ndarray:
        return self.refine.x


def identify_parameters(
    p0: MaterialParams,
    tests: Sequence[tuple[LoadingProgram, ExperimentRecord]],
    fixed: Sequence[str] = (),
    nested: NestedOptions | None = NestedOptions(),
    refine: RefineOptions = RefineOptions(),
    solver: SolverOptions = SolverOptions(),
    weight=None,
) -> IdentificationRun:
    """Nested simplex search (unless ``nested`` is ``None``) followed by refinement."""
    layout = ParameterLayout.for_params(p0, fixed)
    problem = IdentificationProblem(tests, layout, weight, solver)
    x0 = layout.values(p0)
    phi0 = problem.phi(x0)
    phi_nested = None
    evals = 0
    if nested is not None:
        res = nested_identify(problem, x0, nested)
        x0, phi_nested, evals = res.x, res.phi, res.n_evals
    rr = gauss_newton_refine(x0, problem, refine)
    return IdentificationRun(layout.to_params(rr.x), layout, problem, phi0, phi_nested, rr, evals)
