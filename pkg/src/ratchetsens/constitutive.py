"""Material parameters, internal state and evolution right-hand sides.

Three families of combined isotropic-kinematic hardening are covered, each
built from ``n_branches`` rheological branches that carry one backstress:

* ``AF``  - Armstrong-Frederick (rate-independent Maxwell branches),
* ``OW1`` - first Ohno-Wang (Prandtl-Reuss branches with micro-yield radii),
* ``OW2`` - second Ohno-Wang (modified Maxwell branches with exponent ``m``).

Stresses and moduli are in MPa, strains are dimensionless, temperatures in K.
Energies per unit mass are returned in J/kg (MPa are converted with ``MPA``).
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field, fields, replace
from typing import Sequence, Union

from .errors import ConfigError, DegenerateDirectionError, InadmissibleStateError
from .tensors import SymTensor, deviator, double_contract, frobenius_norm

SQRT23 = math.sqrt(2.0 / 3.0)
MPA = 1.0e6  # Pa per MPa
F0 = 1.0  # MPa, Perzyna reference overstress


@dataclass(frozen=True)
class ElasticThermalParams:
    """Elastic and thermal constants.

    ``c_theta0_over_rho`` and ``omega`` default to values for a titanium
    alloy specimen; the cooling time constant ``c/omega`` is about 48 s.
    """

    k: float = 98037.0  # MPa
    mu: float = 37593.0  # MPa
    alpha: float = 1.59e-5  # 1/K, volumetric
    theta0: float = 293.15  # K
    c_theta0_over_rho: float = 1205.8  # J/(kg K)
    rho: float = 4550.0  # kg/m^3
    omega: float = 25.0  # J/(s kg K)

    def __post_init__(self):
        if not (self.k > 0 and self.mu > 0):
            raise ConfigError("elastic moduli k and mu must be positive")
        if not (self.rho > 0 and self.theta0 > 0):
            raise ConfigError("rho and theta0 must be positive")
        if self.omega < 0:
            raise ConfigError("omega must be non-negative")

    @property
    def young(self) -> float:
        return 9.0 * self.k * self.mu / (3.0 * self.k + self.mu)


class ModelFamily(str, enum.Enum):
    AF = "AF"
    OW1 = "OW1"
    OW2 = "OW2"


@dataclass(frozen=True)
class ModelKind:
    family: ModelFamily
    n_branches: int

    def __post_init__(self):
        object.__setattr__(self, "family", ModelFamily(self.family))
        if not 2 <= int(self.n_branches) <= 4:
            raise ConfigError(f"n_branches must be 2, 3 or 4, got {self.n_branches}")

    def __str__(self) -> str:
        return f"{self.family.value}-{self.n_branches}"


@dataclass(frozen=True)
class NewRule:
    """``R = gamma*s - beta*s_eps``; both constants in MPa."""

    gamma: float
    beta: float


@dataclass(frozen=True)
class Voce:
    """``R = p1/p2 * (1 - exp(-p2*s))``; p1 in MPa, p2 dimensionless."""

    p1: float
    p2: float

    def __post_init__(self):
        if not self.p2 > 0:
            raise ConfigError("Voce p2 must be positive")


HardeningRule = Union[NewRule, Voce]


@dataclass(frozen=True)
class MaterialParams:
    """Complete parameter set of one model.

    ``eta == 0`` selects the rate-independent limit; any positive value
    switches to Perzyna viscoplasticity with exponent ``m_perzyna``.
    For OW1 exactly one branch (``elastic_branch``) never yields; its
    radius is stored as ``math.inf``.
    """

    kind: ModelKind
    hardening: HardeningRule
    K: float
    c: tuple[float, ...]
    kappa: tuple[float, ...] = ()
    r: tuple[float, ...] = ()
    m: float | None = None
    elastic_branch: int | None = None
    eta: float = 0.0
    m_perzyna: float = 1.0
    elastic_thermal: ElasticThermalParams = field(default_factory=ElasticThermalParams)

    def __post_init__(self):
        nb = self.kind.n_branches
        object.__setattr__(self, "c", tuple(float(v) for v in self.c))
        object.__setattr__(self, "kappa", tuple(float(v) for v in self.kappa))
        r = [float(v) for v in self.r]
        fam = self.kind.family
        if len(self.c) != nb:
            raise ConfigError(f"{self.kind}: expected {nb} stiffnesses c_l, got {len(self.c)}")
        if not self.K > 0:
            raise ConfigError("initial yield stress K must be positive")
        if any(not v > 0 for v in self.c):
            raise ConfigError("branch stiffnesses c_l must be positive")
        if self.eta < 0 or not self.m_perzyna > 0:
            raise ConfigError("eta must be >= 0 and m_perzyna > 0")
        if fam is ModelFamily.AF:
            if len(self.kappa) != nb or any(v < 0 for v in self.kappa):
                raise ConfigError(f"{self.kind}: need {nb} non-negative kappa_l")
        else:
            if fam is ModelFamily.OW1:
                if self.elastic_branch is None or not 0 <= self.elastic_branch < nb:
                    raise ConfigError("OW1 needs exactly one elastic (unbounded) branch index")
                if len(r) == nb - 1:
                    r.insert(self.elastic_branch, math.inf)
                if len(r) != nb:
                    raise ConfigError(f"{self.kind}: expected {nb - 1} finite radii r_l")
                r[self.elastic_branch] = math.inf
            elif self.elastic_branch is not None:
                raise ConfigError("elastic_branch is only meaningful for OW1")
            if len(r) != nb or any(not v > 0 for v in r):
                raise ConfigError(f"{self.kind}: need {nb} positive radii r_l")
            if fam is ModelFamily.OW2 and not (self.m is not None and self.m > 0):
                raise ConfigError("OW2 needs a positive exponent m")
        object.__setattr__(self, "r", tuple(r))

    @property
    def n_branches(self) -> int:
        return self.kind.n_branches

    @property
    def rate_independent(self) -> bool:
        return self.eta == 0.0

    def with_values(self, **changes) -> MaterialParams:
        return replace(self, **changes)


@dataclass(frozen=True)
class MaterialState:
    eps_i: SymTensor
    eps_li: tuple[SymTensor, ...]
    s: float = 0.0
    s_eps: float = 0.0
    theta: float = 293.15

    @classmethod
    def initial(cls, n_branches: int, theta0: float = 293.15) -> MaterialState:
        zero = SymTensor.zero()
        return cls(zero, tuple(zero for _ in range(n_branches)), 0.0, 0.0, theta0)


# ---------------------------------------------------------------------------
# JSON round trip


def _hardening_to_dict(rule: HardeningRule) -> dict:
    if isinstance(rule, NewRule):
        return {"rule": "new", "gamma_MPa": rule.gamma, "beta_MPa": rule.beta}
    return {"rule": "voce", "p1_MPa": rule.p1, "p2": rule.p2}


def params_to_dict(p: MaterialParams) -> dict:
    """Serialize to a flat JSON-ready dict with unit-bearing keys."""
    out: dict = {
        "model": p.kind.family.value,
        "n_branches": p.n_branches,
        "hardening": _hardening_to_dict(p.hardening),
        "K_MPa": p.K,
        "eta_MPa_s": p.eta,
        "m_perzyna": p.m_perzyna,
    }
    for i, v in enumerate(p.c, 1):
        out[f"c{i}_MPa"] = v
    for i, v in enumerate(p.kappa, 1):
        out[f"kappa{i}_per_MPa"] = v
    for i, v in enumerate(p.r, 1):
        out[f"r{i}_MPa"] = None if math.isinf(v) else v
    if p.m is not None:
        out["m"] = p.m
    if p.elastic_branch is not None:
        out["elastic_branch"] = p.elastic_branch + 1
    et = p.elastic_thermal
    out["elastic_thermal"] = {
        "k_MPa": et.k,
        "mu_MPa": et.mu,
        "alpha_per_K": et.alpha,
        "theta0_K": et.theta0,
        "c_theta0_over_rho_J_per_kgK": et.c_theta0_over_rho,
        "rho_kg_per_m3": et.rho,
        "omega_J_per_skgK": et.omega,
    }
    return out


_ET_KEYS = {
    "k_MPa": "k",
    "mu_MPa": "mu",
    "alpha_per_K": "alpha",
    "theta0_K": "theta0",
    "c_theta0_over_rho_J_per_kgK": "c_theta0_over_rho",
    "rho_kg_per_m3": "rho",
    "omega_J_per_skgK": "omega",
}


def params_from_dict(d: dict) -> MaterialParams:
    try:
        kind = ModelKind(ModelFamily(d["model"]), int(d["n_branches"]))
        h = d["hardening"]
        if h["rule"] == "new":
            rule: HardeningRule = NewRule(float(h["gamma_MPa"]), float(h["beta_MPa"]))
        elif h["rule"] == "voce":
            rule = Voce(float(h["p1_MPa"]), float(h["p2"]))
        else:
            raise ConfigError(f"unknown hardening rule {h['rule']!r}")
        nb = kind.n_branches
        c = tuple(float(d[f"c{i}_MPa"]) for i in range(1, nb + 1))
        kappa = tuple(float(d[f"kappa{i}_per_MPa"]) for i in range(1, nb + 1) if f"kappa{i}_per_MPa" in d)
        r = tuple(
            math.inf if d[f"r{i}_MPa"] is None else float(d[f"r{i}_MPa"])
            for i in range(1, nb + 1)
            if f"r{i}_MPa" in d
        )
        eb = d.get("elastic_branch")
        et_raw = d.get("elastic_thermal", {})
        et = ElasticThermalParams(**{_ET_KEYS[k]: float(v) for k, v in et_raw.items()})
        return MaterialParams(
            kind=kind,
            hardening=rule,
            K=float(d["K_MPa"]),
            c=c,
            kappa=kappa,
            r=r,
            m=None if d.get("m") is None else float(d["m"]),
            elastic_branch=None if eb is None else int(eb) - 1,
            eta=float(d.get("eta_MPa_s", 0.0)),
            m_perzyna=float(d.get("m_perzyna", 1.0)),
            elastic_thermal=et,
        )
    except KeyError as exc:
        raise ConfigError(f"parameter document is missing field {exc}") from exc


# ---------------------------------------------------------------------------
# Constitutive relations


def hooke_stress(eps_m: SymTensor, eps_i: SymTensor, p: ElasticThermalParams) -> SymTensor:
    eps_e = eps_m - eps_i
    return SymTensor.identity() * (p.k * eps_e.trace()) + deviator(eps_e) * (2.0 * p.mu)


def backstress(eps_i: SymTensor, eps_li: SymTensor, c_l: float) -> SymTensor:
    return deviator(eps_i - eps_li) * c_l


def effective_stress(sigma: SymTensor, backstresses: Sequence[SymTensor]) -> SymTensor:
    out = sigma
    for x in backstresses:
        out = out - x
    return out


def isotropic_hardening(s: float, s_eps: float, rule: HardeningRule) -> float:
    if isinstance(rule, NewRule):
        return rule.gamma * s - rule.beta * s_eps
    return rule.p1 / rule.p2 * -math.expm1(-rule.p2 * s)


def overstress_and_rate(sigma_eff: SymTensor, K: float, R: float, eta: float, m_perzyna: float) -> tuple[float, float]:
    """Perzyna overstress ``f`` (MPa) and inelastic rate ``lambda_i`` (1/s)."""
    if not eta > 0:
        raise ValueError("overstress_and_rate needs eta > 0 (viscous mode)")
    f = frobenius_norm(deviator(sigma_eff)) - SQRT23 * (K + R)
    lam = max(f / F0, 0.0) ** m_perzyna / eta if f > 0 else 0.0
    return f, lam


def flow_direction(sigma_eff: SymTensor) -> SymTensor:
    dev = deviator(sigma_eff)
    norm = frobenius_norm(dev)
    if norm <= 1e-14 * max(sigma_eff.scale(), 1.0):
        raise DegenerateDirectionError("effective stress deviator vanishes")
    return dev / norm


def branch_rate_af(lambda_i: float, kappa_l: float, X_l: SymTensor) -> SymTensor:
    return X_l * (lambda_i * kappa_l)


def branch_rate_ow1(eps_i_rate: SymTensor, X_l: SymTensor, r_l: float, c_l: float, tol: float = 1e-9) -> SymTensor:
    """Rate of a Prandtl-Reuss branch strain.

    Zero inside the micro-yield surface. On the surface the multiplier is
    ``<eps_i_rate : n>`` with ``n = X/|X|``, which keeps ``|X|`` stationary
    (consistency); ``c_l`` only scales both sides of that condition.
    """
    if math.isinf(r_l):
        return SymTensor.zero()
    radius = SQRT23 * r_l
    norm = frobenius_norm(X_l)
    if norm > radius * (1.0 + tol):
        raise InadmissibleStateError(f"|X| = {norm:.6g} exceeds micro-yield radius {radius:.6g}")
    if norm < radius * (1.0 - tol) or norm == 0.0:
        return SymTensor.zero()
    n = X_l / norm
    lam = max(double_contract(eps_i_rate, n), 0.0)
    return n * lam


def branch_rate_ow2(eps_i_rate: SymTensor, X_l: SymTensor, r_l: float, m: float) -> SymTensor:
    norm = frobenius_norm(X_l)
    if norm == 0.0:
        return SymTensor.zero()
    n = X_l / norm
    drive = double_contract(eps_i_rate, n)
    if drive <= 0.0:
        return SymTensor.zero()
    return n * ((SQRT23 * norm / r_l) ** m * drive)


def backstress_rate_af(eps_i_rate: SymTensor, X_l: SymTensor, lambda_i: float, c_l: float, kappa_l: float) -> SymTensor:
    """Armstrong-Frederick law written directly for the backstress."""
    return (deviator(eps_i_rate) - X_l * (kappa_l * lambda_i)) * c_l


def backstress_rate_ow2(
    sigma_eff: SymTensor, X_l: SymTensor, lambda_i: float, c_l: float, r_l: float, m: float
) -> SymTensor:
    """Second Ohno-Wang law written directly for the backstress."""
    direction = flow_direction(sigma_eff) if lambda_i > 0 else SymTensor.zero()
    rate = direction * lambda_i
    norm = frobenius_norm(X_l)
    if norm == 0.0:
        return rate * c_l
    n = X_l / norm
    recovery = (SQRT23 * norm / r_l) ** m * max(double_contract(direction, n), 0.0) * lambda_i
    return (rate - n * recovery) * c_l


def dissipation_rate(
    sigma_eff: SymTensor,
    backstresses: Sequence[SymTensor],
    eps_i_rate: SymTensor,
    branch_rates: Sequence[SymTensor],
    rho: float,
) -> float:
    """Mechanical dissipation per unit mass in W/kg (stresses in MPa)."""
    total = double_contract(sigma_eff, eps_i_rate)
    for x, rate in zip(backstresses, branch_rates):
        total += double_contract(x, rate)
    return total * MPA / rho


def free_energy_and_entropy(state: MaterialState, eps_e: SymTensor, p: MaterialParams) -> tuple[float, float]:
    """Helmholtz free energy (J/kg) and entropy (J/(kg K)) of a state."""
    et = p.elastic_thermal
    if not state.theta > 0:
        raise ValueError("temperature must be positive")
    dev_e = deviator(eps_e)
    rho_psi = 0.5 * et.k * eps_e.trace() ** 2 + et.mu * double_contract(dev_e, dev_e)
    for eps_li, c_l in zip(state.eps_li, p.c):
        dev_le = deviator(state.eps_i - eps_li)
        rho_psi += 0.5 * c_l * double_contract(dev_le, dev_le)
    ratio = state.theta / et.theta0
    psi_theta = -et.c_theta0_over_rho * (state.theta * math.log(ratio) - (state.theta - et.theta0))
    psi = rho_psi * MPA / et.rho + psi_theta
    tr_sigma = 3.0 * et.k * eps_e.trace()
    zeta = et.c_theta0_over_rho * math.log(ratio) + et.alpha / (3.0 * et.rho) * tr_sigma * MPA
    return psi, zeta


def parameter_names(p: MaterialParams) -> list[str]:
    """Names of the scalar MaterialParams fields that can be identified."""
    names = ["gamma", "beta"] if isinstance(p.hardening, NewRule) else ["p1", "p2"]
    names += [f"c{i}" for i in range(1, p.n_branches + 1)]
    if p.kind.family is ModelFamily.AF:
        names += [f"kappa{i}" for i in range(1, p.n_branches + 1)]
    else:
        names += [f"r{i}" for i in range(1, p.n_branches + 1) if not math.isinf(p.r[i - 1])]
    names.append("K")
    if p.kind.family is ModelFamily.OW2:
        names.append("m")
    return names


def get_value(p: MaterialParams, name: str) -> float:
    if name in ("gamma", "beta", "p1", "p2"):
        return float(getattr(p.hardening, name))
    if name in ("K", "m", "eta", "m_perzyna"):
        return float(getattr(p, name))
    for prefix, attr in (("kappa", "kappa"), ("c", "c"), ("r", "r")):
        if name.startswith(prefix) and name[len(prefix):].isdigit():
            return float(getattr(p, attr)[int(name[len(prefix):]) - 1])
    raise KeyError(name)


def set_values(p: MaterialParams, values: dict[str, float]) -> MaterialParams:
    """Return a copy of ``p`` with the named scalar fields replaced."""
    hard = {f.name: getattr(p.hardening, f.name) for f in fields(p.hardening)}
    top: dict = {}
    seq = {"c": list(p.c), "kappa": list(p.kappa), "r": list(p.r)}
    for name, v in values.items():
        v = float(v)
        if name in hard:
            hard[name] = v
        elif name in ("K", "m", "eta", "m_perzyna"):
            top[name] = v
        else:
            for prefix in ("kappa", "c", "r"):
                if name.startswith(prefix) and name[len(prefix):].isdigit():
                    idx = int(name[len(prefix):]) - 1
                    if prefix == "r" and p.elastic_branch == idx:
                        raise KeyError(f"{name} belongs to the unbounded branch and is fixed")
                    seq[prefix][idx] = v
                    break
            else:
                raise KeyError(name)
    rule = type(p.hardening)(**hard)
    return replace(p, hardening=rule, c=tuple(seq["c"]), kappa=tuple(seq["kappa"]), r=tuple(seq["r"]), **top)
