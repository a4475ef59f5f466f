"""Stress-controlled uniaxial simulation, extrema extraction and heat balance."""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import kernel
from .constitutive import (
    MPA,
    SQRT23,
    ElasticThermalParams,
    MaterialParams,
    MaterialState,
    ModelFamily,
    NewRule,
    hooke_stress,
)
from .errors import ConfigError, IntegrationError
from .program import LoadingProgram, ProgramGrid
from .tensors import SymTensor

_N = np.sqrt(2.0 / 3.0) * np.array([1.0, -0.5, -0.5, 0.0, 0.0, 0.0])

_FAMILY_CODE = {ModelFamily.AF: kernel.FAM_AF, ModelFamily.OW1: kernel.FAM_OW1, ModelFamily.OW2: kernel.FAM_OW2}


@dataclass(frozen=True)
class SolverOptions:
    """Discretization and tolerance settings of the integrator.

    Parameters
    ----------
    nodes_per_cycle
        Grid nodes per load cycle; must be a multiple of 4 so that every
        stress turning point is a node.
    ramp_nodes, hold_nodes
        Nodes used for monotonic ramps/unloading and for holds.
    stress_tol
        Admissible mismatch (MPa) between the computed and prescribed stress.
    yield_tol
        Relative tolerance of the elastic trial check.
    max_halvings
        A step whose local corrector fails is retried with 2, 4, ... substeps.
    thermal_strain
        Add the thermal expansion to the reported axial strain.
    snapshot_stride
        Keep every ``snapshot_stride``-th state in the trace.
    theta_init
        Initial temperature; defaults to the reference temperature.
    """

    nodes_per_cycle: int = 40
    ramp_nodes: int = 40
    hold_nodes: int = 4
    stress_tol: float = 1e-6
    yield_tol: float = 1e-12
    max_halvings: int = 6
    thermal_strain: bool = False
    snapshot_stride: int = 1
    theta_init: float | None = None

    def __post_init__(self):
        if self.nodes_per_cycle < 4 or self.nodes_per_cycle % 4:
            raise ConfigError("nodes_per_cycle must be a positive multiple of 4")
        if self.ramp_nodes < 1 or self.hold_nodes < 1:
            raise ConfigError("ramp_nodes and hold_nodes must be positive")
        if not (self.stress_tol > 0 and self.yield_tol > 0):
            raise ConfigError("solver tolerances must be positive")
        if self.max_halvings < 0 or self.snapshot_stride < 1:
            raise ConfigError("max_halvings must be >= 0 and snapshot_stride >= 1")

    def to_dict(self) -> dict:
        return dict(self.__dict__)


@dataclass(frozen=True, eq=False)
class SimulationTrace:
    """Time series produced by :func:`integrate`.

    Internal variables are stored through their coordinate along the
    uniaxial deviatoric direction ``n``; :meth:`state` rebuilds the tensors.
    ``d_eff`` and ``d_branch`` are the per-step dissipated work densities (MPa)
    of the effective stress and of each branch backstress.
    """

    params: MaterialParams
    grid: ProgramGrid
    strain: np.ndarray
    lateral_strain: np.ndarray
    temperature: np.ndarray
    s: np.ndarray
    s_eps: np.ndarray
    eps_i: np.ndarray
    eps_li: np.ndarray
    dissipation: np.ndarray
    d_eff: np.ndarray
    d_branch: np.ndarray
    snapshot_stride: int = 1
    thermal_strain: bool = False

    @property
    def time(self) -> np.ndarray:
        return self.grid.time

    @property
    def stress(self) -> np.ndarray:
        return self.grid.stress

    def backstress(self) -> np.ndarray:
        """Backstress coordinates along ``n``, shape (n_nodes, n_branches)."""
        c = np.asarray(self.params.c)
        return c * (self.eps_i[:, None] - self.eps_li)

    def stress_tensor(self, i: int) -> SymTensor:
        """Full stress tensor recomputed from the strains at node ``i``."""
        et = self.params.elastic_thermal
        shift = et.alpha * (self.temperature[i] - et.theta0) / 3.0 if self.thermal_strain else 0.0
        lat = self.lateral_strain[i] - shift
        eps_m = SymTensor.diag(self.strain[i] - shift, lat, lat)
        return hooke_stress(eps_m, SymTensor(self.eps_i[i] * _N), et)

    def state(self, i: int) -> MaterialState:
        return MaterialState(
            eps_i=SymTensor(self.eps_i[i] * _N),
            eps_li=tuple(SymTensor(v * _N) for v in self.eps_li[i]),
            s=float(self.s[i]),
            s_eps=float(self.s_eps[i]),
            theta=float(self.temperature[i]),
        )

    def snapshots(self) -> list[tuple[float, MaterialState]]:
        return [(float(self.time[i]), self.state(i)) for i in range(0, len(self.time), self.snapshot_stride)]

    def to_csv(self, path) -> None:
        header = ["time_s", "stress_MPa", "strain", "temperature_K", "dissipation_J_per_kg", "s", "s_eps"]
        cols = [self.time, self.stress, self.strain, self.temperature, self.dissipation, self.s, self.s_eps]
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(header)
            for row in zip(*cols):
                w.writerow([f"{v:.17g}" for v in row])


def _kernel_arguments(params: MaterialParams) -> dict:
    rule = params.hardening
    nb = params.n_branches
    if isinstance(rule, NewRule):
        hk, h1, h2 = kernel.HARD_NEW, rule.gamma, rule.beta
    else:
        hk, h1, h2 = kernel.HARD_VOCE, rule.p1, rule.p2
    fam = params.kind.family
    kappa = np.asarray(params.kappa if fam is ModelFamily.AF else np.zeros(nb), dtype=float)
    # saturation radius of |X| along n: sqrt(2/3) r for OW1 surfaces, while the
    # OW2 recovery factor (sqrt(2/3)|X|/r)^m reaches one at sqrt(3/2) r
    if fam is ModelFamily.AF:
        rr = np.full(nb, np.inf)
    elif fam is ModelFamily.OW1:
        rr = SQRT23 * np.asarray(params.r, dtype=float)
    else:
        rr = np.asarray(params.r, dtype=float) / SQRT23
    return dict(
        fam=_FAMILY_CODE[fam],
        hk=hk,
        h1=float(h1),
        h2=float(h2),
        K=float(params.K),
        c=np.asarray(params.c, dtype=float),
        kappa=kappa,
        rr=rr,
        m_ow=float(params.m or 0.0),
        eta=float(params.eta),
        m_p=float(params.m_perzyna),
    )


def integrate(params: MaterialParams, program: LoadingProgram, opts: SolverOptions = SolverOptions()) -> SimulationTrace:
    """Simulate ``program`` for the material ``params``.

    Raises
    ------
    IntegrationError
        If a step cannot be completed even after ``opts.max_halvings``
        substep doublings; the offending parameters are attached.
    """
    if not program.segments:
        raise ConfigError("cannot integrate an empty program")
    grid = program.discretize(opts.nodes_per_cycle, opts.ramp_nodes, opts.hold_nodes)
    et = params.elastic_thermal
    n = grid.n_nodes
    nb = params.n_branches
    eps11 = np.zeros(n)
    eps22 = np.zeros(n)
    theta = np.zeros(n)
    s = np.zeros(n)
    seps = np.zeros(n)
    ei = np.zeros(n)
    eli = np.zeros((n, nb))
    diss = np.zeros(n)
    d_eff = np.zeros(n)
    d_br = np.zeros((n, nb))
    theta_init = et.theta0 if opts.theta_init is None else float(opts.theta_init)
    ka = _kernel_arguments(params)
    status, step = kernel.integrate_uniaxial(
        ka["fam"], ka["hk"], ka["h1"], ka["h2"], ka["K"], ka["c"], ka["kappa"], ka["rr"], ka["m_ow"],
        ka["eta"], ka["m_p"],
        et.k, et.mu, et.alpha, et.theta0, et.c_theta0_over_rho, et.rho, et.omega, theta_init,
        bool(opts.thermal_strain),
        grid.time, grid.stress, opts.yield_tol, opts.max_halvings,
        eps11, eps22, theta, s, seps, ei, eli, diss, d_eff, d_br,
    )  # fmt: skip
    if status != kernel.OK:
        raise IntegrationError(
            f"{kernel.STATUS_TEXT[status]} at t = {grid.time[step]:.6g} s (step {step})",
            step=int(step),
            time=float(grid.time[step]),
            params=params,
        )
    return SimulationTrace(
        params=params,
        grid=grid,
        strain=eps11,
        lateral_strain=eps22,
        temperature=theta,
        s=s,
        s_eps=seps,
        eps_i=ei,
        eps_li=eli,
        dissipation=diss,
        d_eff=d_eff,
        d_branch=d_br,
        snapshot_stride=opts.snapshot_stride,
        thermal_strain=opts.thermal_strain,
    )


@dataclass(frozen=True, eq=False)
class ExperimentRecord:
    """Per-cycle strain extrema of the cyclic stage.

    ``turning_times`` are the instants of the stress maxima and minima
    measured from the start of the cyclic stage, interleaved as
    ``max1, min1, max2, ...``; ``duration`` is the cyclic-stage length.
    """

    max_strain: np.ndarray
    min_strain: np.ndarray
    turning_times: np.ndarray
    duration: float
    metadata: dict = field(default_factory=dict)
    temperature: np.ndarray | None = None

    def __post_init__(self):
        mx = np.asarray(self.max_strain, dtype=float)
        mn = np.asarray(self.min_strain, dtype=float)
        if mx.shape != mn.shape or mx.ndim != 1:
            raise ConfigError("max_strain and min_strain must be 1-D arrays of equal length")
        if len(self.turning_times) != 2 * len(mx):
            raise ConfigError("turning_times must hold two instants per cycle")
        object.__setattr__(self, "max_strain", mx)
        object.__setattr__(self, "min_strain", mn)
        object.__setattr__(self, "turning_times", np.asarray(self.turning_times, dtype=float))

    @property
    def n_cycles(self) -> int:
        return len(self.max_strain)

    def vector(self) -> np.ndarray:
        """Interleaved ``[max1, min1, max2, min2, ...]``."""
        out = np.empty(2 * self.n_cycles)
        out[0::2] = self.max_strain
        out[1::2] = self.min_strain
        return out

    def with_vector(self, v: np.ndarray, **meta) -> ExperimentRecord:
        v = np.asarray(v, dtype=float)
        return ExperimentRecord(
            v[0::2].copy(), v[1::2].copy(), self.turning_times, self.duration, {**self.metadata, **meta}, self.temperature
        )

    def to_csv(self, path) -> None:
        """Write the extrema table and a ``.json`` sidecar with metadata."""
        path = Path(path)
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["cycle", "max_strain", "min_strain"])
            for k, (a, b) in enumerate(zip(self.max_strain, self.min_strain), 1):
                w.writerow([k, f"{a:.17g}", f"{b:.17g}"])
        side = {
            "metadata": self.metadata,
            "duration_s": self.duration,
            "turning_times_s": [float(t) for t in self.turning_times],
        }
        if self.temperature is not None:
            side["temperature_K"] = [float(t) for t in self.temperature]
        path.with_suffix(".json").write_text(json.dumps(side, indent=2, sort_keys=True) + "\n")

    @classmethod
    def from_csv(cls, path) -> ExperimentRecord:
        path = Path(path)
        with open(path, newline="") as fh:
            rows = list(csv.reader(fh))
        if not rows or rows[0] != ["cycle", "max_strain", "min_strain"]:
            raise ConfigError(f"{path}: expected header cycle,max_strain,min_strain")
        data = np.array([[float(x) for x in r[1:]] for r in rows[1:]]).reshape(-1, 2)
        side_path = path.with_suffix(".json")
        if not side_path.exists():
            raise ConfigError(f"{path}: missing metadata sidecar {side_path.name}")
        side = json.loads(side_path.read_text())
        temp = side.get("temperature_K")
        return cls(
            data[:, 0],
            data[:, 1],
            np.asarray(side["turning_times_s"], dtype=float),
            float(side["duration_s"]),
            side.get("metadata", {}),
            None if temp is None else np.asarray(temp, dtype=float),
        )


def extract_extrema(trace: SimulationTrace, program: LoadingProgram) -> ExperimentRecord:
    """Read the strain at every stress turning point of the cyclic stage."""
    grid = trace.grid
    if program.n_cycles == 0:
        raise ConfigError("program has no cyclic stage")
    if 2 * program.n_cycles != len(grid.turning_nodes) or not math.isclose(grid.time[-1], program.duration):
        raise ConfigError("trace does not belong to this program")
    nodes = grid.turning_nodes
    if nodes[-1] >= len(trace.strain):
        raise ConfigError("trace does not cover the cyclic stage")
    strain = trace.strain[nodes]
    return ExperimentRecord(
        max_strain=strain[0::2].copy(),
        min_strain=strain[1::2].copy(),
        turning_times=grid.turning_times.copy(),
        duration=grid.cyclic_duration,
        metadata=dict(program.metadata),
        temperature=trace.temperature.copy(),
    )


def simulate_record(params: MaterialParams, program: LoadingProgram, opts: SolverOptions = SolverOptions()) -> ExperimentRecord:
    return extract_extrema(integrate(params, program, opts), program)


def heat_capacity(theta: float, p: ElasticThermalParams) -> float:
    """``c_theta = c0 - alpha^2 k theta / rho`` in J/(kg K)."""
    return p.c_theta0_over_rho - p.alpha**2 * p.k * MPA * theta / p.rho


def temperature_step(
    theta: float, tr_strain_rate: float, dissipation: float, p: ElasticThermalParams, dt: float
) -> float:
    """Advance the heat balance over ``dt`` with rates held constant.

    ``c_theta dtheta/dt = -(alpha k theta / rho) tr(eps_dot) + delta - omega (theta - theta0)``
    with ``c_theta`` frozen at the current temperature and ``delta`` in W/kg.
    The linear ODE is integrated exactly over the step.
    """
    if not theta > 0:
        raise ValueError("temperature must be positive")
    c = heat_capacity(theta, p)
    if not c > 0:
        raise ValueError(f"non-positive heat capacity {c:.6g} J/(kg K) at theta = {theta:.6g} K")
    a = p.alpha * p.k * MPA * tr_strain_rate / p.rho
    lam = (a + p.omega) / c
    rhs = (-a * theta + dissipation - p.omega * (theta - p.theta0)) / c
    z = lam * dt
    phi = 1.0 if abs(z) < 1e-12 else -math.expm1(-z) / z
    return theta + rhs * phi * dt
