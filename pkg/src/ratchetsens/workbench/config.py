"""Run configuration read from JSON.

Relative file paths are resolved against the directory of the config file.
Unknown keys are rejected so that typos do not silently fall back to
defaults.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, fields, replace
from pathlib import Path
from typing import Any

from ..constitutive import MaterialParams, ModelFamily, params_from_dict
from ..errors import ConfigError
from ..identify import NestedOptions, RefineOptions
from ..program import LoadingProgram, StageDurations, make_experiment_program, make_metric_program
from ..sensitivity import NoiseModel, SobolConfig
from ..simulator import SolverOptions

ROLES = ("train", "validation")


def _build(cls, data: dict | None, where: str):
    """Instantiate dataclass ``cls`` from ``data``, rejecting unknown keys."""
    data = dict(data or {})
    names = {f.name for f in fields(cls)}
    unknown = sorted(set(data) - names)
    if unknown:
        raise ConfigError(f"{where}: unknown key(s) {', '.join(unknown)}")
    try:
        return cls(**data)
    except TypeError as exc:
        raise ConfigError(f"{where}: {exc}") from exc


@dataclass(frozen=True)
class ModelSpec:
    family: str = "AF"
    n_branches: int = 2
    hardening: str = "new"

    def __post_init__(self):
        try:
            ModelFamily(self.family)
        except ValueError:
            raise ConfigError(f"unknown model family {self.family!r}") from None
        if self.hardening not in ("new", "voce"):
            raise ConfigError("hardening must be 'new' or 'voce'")
        if self.n_branches < 1:
            raise ConfigError("n_branches must be at least 1")

    def check(self, p: MaterialParams, what: str) -> None:
        rule = "new" if type(p.hardening).__name__ == "NewRule" else "voce"
        got = (p.kind.family.value, p.n_branches, rule)
        if got != (self.family, self.n_branches, self.hardening):
            raise ConfigError(f"{what} describes {got}, the run is configured for "
                              f"{(self.family, self.n_branches, self.hardening)}")


@dataclass(frozen=True)
class ExperimentSpec:
    """One four-stage ratcheting test and the file holding its extrema."""

    name: str
    sigma_m: float
    sigma_a_max: float
    n_cycles: int
    record: str | None = None
    role: str = "train"
    amplitude_start_fraction: float = 0.05
    durations: StageDurations = StageDurations()

    def __post_init__(self):
        if self.role not in ROLES:
            raise ConfigError(f"experiment {self.name!r}: role must be one of {ROLES}")
        if isinstance(self.durations, dict):
            object.__setattr__(self, "durations", _build(StageDurations, self.durations, f"{self.name}.durations"))

    def program(self) -> LoadingProgram:
        prog = make_experiment_program(
            self.sigma_m, self.sigma_a_max, self.n_cycles, self.durations, self.amplitude_start_fraction
        )
        return LoadingProgram(prog.segments, {**prog.metadata, "name": self.name})


@dataclass(frozen=True)
class MetricSpec:
    n_cycles: int = 50
    sigma_max_final: float = 890.0
    period: float = 1.0
    sigma_max_initial: float = 0.0

    def program(self) -> LoadingProgram:
        return make_metric_program(self.n_cycles, self.sigma_max_final, self.period, self.sigma_max_initial)


@dataclass(frozen=True)
class IdentificationSpec:
    fixed: tuple[str, ...] = ()
    skip_nested: bool = False
    nested: NestedOptions = NestedOptions()
    refine: RefineOptions = RefineOptions()

    def __post_init__(self):
        object.__setattr__(self, "fixed", tuple(self.fixed))
        if isinstance(self.nested, dict):
            object.__setattr__(self, "nested", _build(NestedOptions, self.nested, "identification.nested"))
        if isinstance(self.refine, dict):
            object.__setattr__(self, "refine", _build(RefineOptions, self.refine, "identification.refine"))


@dataclass(frozen=True)
class SensitivitySpec:
    workers: int = 1
    chunk: int = 1000
    exact_metric: int = 0
    rank_tol: float = 1e-10

    def __post_init__(self):
        if self.workers < 1 or self.chunk < 1 or self.exact_metric < 0:
            raise ConfigError("workers and chunk must be positive, exact_metric non-negative")


@dataclass(frozen=True)
class DiagnosticsSpec:
    """Model sizes to compare and the thresholds of the four criteria."""

    branches: tuple[int, ...] = (2, 3, 4)
    initial: dict = field(default_factory=dict)
    min_relative_gain: float = 0.05
    max_correlation: float = 0.999
    max_cloud_size: float = 1e-3

    def __post_init__(self):
        object.__setattr__(self, "branches", tuple(int(b) for b in self.branches))
        object.__setattr__(self, "initial", {str(k): v for k, v in self.initial.items()})


@dataclass(frozen=True)
class RunConfig:
    model: ModelSpec = ModelSpec()
    experiments: tuple[ExperimentSpec, ...] = ()
    solver: SolverOptions = SolverOptions()
    identification: IdentificationSpec = IdentificationSpec()
    noise: NoiseModel = NoiseModel()
    sobol: SobolConfig | None = None
    sensitivity: SensitivitySpec = SensitivitySpec()
    metric_program: MetricSpec = MetricSpec()
    diagnostics: DiagnosticsSpec = DiagnosticsSpec()
    truth: str | None = None
    initial: str | None = None
    output_dir: str = "out"
    base_dir: Path = Path(".")

    def __post_init__(self):
        names = [e.name for e in self.experiments]
        if len(set(names)) != len(names):
            raise ConfigError("experiment names must be unique")
        _check_positive(self)

    # -- loading ---------------------------------------------------------

    @classmethod
    def from_dict(cls, d: dict, base_dir: Path | str = ".") -> RunConfig:
        d = dict(d)
        allowed = {f.name for f in fields(cls)} - {"base_dir"}
        unknown = sorted(set(d) - allowed)
        if unknown:
            raise ConfigError(f"config: unknown key(s) {', '.join(unknown)}")
        kw: dict[str, Any] = {"base_dir": Path(base_dir)}
        sections = {
            "model": ModelSpec,
            "solver": SolverOptions,
            "identification": IdentificationSpec,
            "noise": NoiseModel,
            "sobol": SobolConfig,
            "sensitivity": SensitivitySpec,
            "metric_program": MetricSpec,
            "diagnostics": DiagnosticsSpec,
        }
        for key, typ in sections.items():
            if key in d:
                kw[key] = _build(typ, d[key], key)
        if "experiments" in d:
            kw["experiments"] = tuple(_build(ExperimentSpec, e, f"experiments[{i}]") for i, e in enumerate(d["experiments"]))
        for key in ("truth", "initial", "output_dir"):
            if key in d:
                kw[key] = d[key]
        return cls(**kw)

    @classmethod
    def load(cls, path) -> RunConfig:
        path = Path(path)
        try:
            data = json.loads(path.read_text())
        except FileNotFoundError:
            raise ConfigError(f"config file {path} not found") from None
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: invalid JSON ({exc})") from None
        return cls.from_dict(data, path.parent)

    def with_overrides(self, **kw) -> RunConfig:
        return replace(self, **{k: v for k, v in kw.items() if v is not None})

    # -- derived objects -------------------------------------------------

    def resolve(self, p: str | Path) -> Path:
        p = Path(p)
        return p if p.is_absolute() else self.base_dir / p

    @property
    def out(self) -> Path:
        return self.resolve(self.output_dir)

    def train(self) -> tuple[ExperimentSpec, ...]:
        return tuple(e for e in self.experiments if e.role == "train")

    def held_out(self) -> tuple[ExperimentSpec, ...]:
        return tuple(e for e in self.experiments if e.role == "validation")

    def record_path(self, e: ExperimentSpec) -> Path:
        return self.resolve(e.record) if e.record else self.out / f"{e.name}.csv"

    def sobol_config(self) -> SobolConfig:
        """The Sobol slicing, with one dimension per noise mode and training test."""
        dims = self.noise.n_modes * len(self.train())
        if self.sobol is None:
            return SobolConfig(dimensions=max(dims, 1))
        if self.train() and self.sobol.dimensions != dims:
            raise ConfigError(
                f"sobol.dimensions = {self.sobol.dimensions}, but {len(self.train())} tests with "
                f"{self.noise.n_modes} modes need {dims}"
            )
        return self.sobol

    def require_files(self, *paths: Path) -> None:
        missing = [str(p) for p in paths if not Path(p).exists()]
        if missing:
            raise ConfigError("missing input file(s): " + ", ".join(missing))

    def load_params(self, path, what: str = "parameter file") -> MaterialParams:
        path = self.resolve(path)
        self.require_files(path)
        try:
            p = params_from_dict(json.loads(path.read_text()))
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: invalid JSON ({exc})") from None
        self.model.check(p, what)
        return p


def _check_positive(cfg: RunConfig) -> None:
    checks = {
        "solver.stress_tol": cfg.solver.stress_tol,
        "solver.yield_tol": cfg.solver.yield_tol,
        "identification.nested.inner_xatol": cfg.identification.nested.inner_xatol,
        "identification.nested.outer_xatol": cfg.identification.nested.outer_xatol,
        "identification.nested.fatol": cfg.identification.nested.fatol,
        "identification.refine.grad_tol": cfg.identification.refine.grad_tol,
        "identification.refine.rel_step": cfg.identification.refine.rel_step,
        "sensitivity.rank_tol": cfg.sensitivity.rank_tol,
    }
    bad = [k for k, v in checks.items() if not (v > 0 and math.isfinite(v))]
    if bad:
        raise ConfigError("tolerances must be positive: " + ", ".join(bad))
