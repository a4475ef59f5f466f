"""Full-tensor viscoplastic reference integrator.

Integrates the Perzyna model in time with a general-purpose ODE solver,
using only the tensor-level operations of :mod:`constitutive`. Branches can
be advanced either through their strains ``eps_li`` (strain form) or
directly through their backstresses ``X_l`` (stress form); both must
produce the same backstress history. It is slow and meant for
cross-checks on short programs, not for identification.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.integrate import solve_ivp

from .constitutive import (
    SQRT23,
    MaterialParams,
    ModelFamily,
    backstress,
    backstress_rate_af,
    backstress_rate_ow2,
    branch_rate_af,
    branch_rate_ow2,
    effective_stress,
    flow_direction,
    isotropic_hardening,
    overstress_and_rate,
)
from .errors import ConfigError, IntegrationError
from .program import LoadingProgram
from .tensors import SymTensor, deviator, frobenius_norm

FORMS = ("strain", "stress")


@dataclass(frozen=True, eq=False)
class ReferenceTrace:
    time: np.ndarray
    strain: np.ndarray  # axial mechanical strain
    eps_i: np.ndarray  # (n_t, 6)
    backstress: np.ndarray  # (n_t, n_branches, 6)
    s: np.ndarray
    s_eps: np.ndarray


def _unpack(y: np.ndarray, nb: int):
    eps_i = SymTensor(y[:6])
    z = [SymTensor(y[6 + 6 * l : 12 + 6 * l]) for l in range(nb)]
    return eps_i, z, y[6 + 6 * nb], y[7 + 6 * nb]


def _rhs_factory(params: MaterialParams, program: LoadingProgram, form: str):
    fam = params.kind.family
    nb = params.n_branches
    et = params.elastic_thermal
    c = params.c

    def rhs(t, y):
        eps_i, z, s, s_eps = _unpack(y, nb)
        sig = program.stress(t)[0]
        dsig = program.stress_rate(t)[0]
        X = [backstress(eps_i, zl, cl) for zl, cl in zip(z, c)] if form == "strain" else z
        sigma = SymTensor.diag(sig, 0.0, 0.0)
        sigma_eff = effective_stress(sigma, X)
        R = isotropic_hardening(s, s_eps, params.hardening)
        _, lam = overstress_and_rate(sigma_eff, params.K, R, params.eta, params.m_perzyna)
        direction = flow_direction(sigma_eff) if lam > 0 else SymTensor.zero()
        deps_i = direction * lam
        out = np.empty_like(y)
        out[:6] = deps_i.components
        for l in range(nb):
            if form == "strain":
                if fam is ModelFamily.AF:
                    rate = branch_rate_af(lam, params.kappa[l], X[l])
                else:
                    rate = branch_rate_ow2(deps_i, X[l], params.r[l], params.m)
            elif fam is ModelFamily.AF:
                rate = backstress_rate_af(deps_i, X[l], lam, c[l], params.kappa[l])
            else:
                rate = backstress_rate_ow2(sigma_eff, X[l], lam, c[l], params.r[l], params.m)
            out[6 + 6 * l : 12 + 6 * l] = rate.components
        deps_e = deviator(SymTensor.diag(dsig, 0.0, 0.0)) / (2.0 * et.mu)
        out[6 + 6 * nb] = SQRT23 * lam
        out[7 + 6 * nb] = SQRT23 * frobenius_norm(deps_e + deps_i)
        return out

    return rhs


def integrate_reference(
    params: MaterialParams,
    program: LoadingProgram,
    form: str = "strain",
    t_eval: np.ndarray | None = None,
    rtol: float = 1e-12,
    atol: float = 1e-16,
    max_step: float | None = None,
) -> ReferenceTrace:
    """Integrate ``program`` in viscous mode with an adaptive ODE solver.

    Parameters
    ----------
    form
        ``"strain"`` advances branch strains, ``"stress"`` advances the
        backstresses directly.
    max_step
        Upper bound on the solver step; defaults to a twentieth of the
        shortest segment so that no loading feature is stepped over.
    """
    if form not in FORMS:
        raise ConfigError(f"form must be one of {FORMS}")
    if params.kind.family is ModelFamily.OW1:
        raise ConfigError("the reference integrator covers AF and OW2 only")
    if not params.eta > 0:
        raise ConfigError("the reference integrator needs a positive viscosity eta")
    nb = params.n_branches
    T = program.duration
    if t_eval is None:
        t_eval = np.linspace(0.0, T, 401)
    if max_step is None:
        durations = [seg.duration for seg in program.segments if seg.duration > 0]
        periods = [seg.period for seg in program.segments if hasattr(seg, "period")]
        max_step = min(durations + periods) / 20.0
    rhs = _rhs_factory(params, program, form)
    y0 = np.zeros(8 + 6 * nb)
    sol = solve_ivp(rhs, (0.0, T), y0, method="DOP853", t_eval=t_eval, rtol=rtol, atol=atol, max_step=max_step)
    if not sol.success:
        raise IntegrationError(f"reference integration failed: {sol.message}", params=params)
    Y = sol.y.T
    eps_i = Y[:, :6]
    z = Y[:, 6 : 6 + 6 * nb].reshape(-1, nb, 6)
    if form == "strain":
        X = np.empty_like(z)
        for l in range(nb):
            d = eps_i - z[:, l, :]
            d[:, :3] -= d[:, :3].mean(axis=1, keepdims=True)
            X[:, l, :] = params.c[l] * d
    else:
        X = z
    et = params.elastic_thermal
    sig = program.stress(sol.t)
    strain = sig / et.young + eps_i[:, 0]
    return ReferenceTrace(sol.t, strain, eps_i, X, Y[:, 6 + 6 * nb], Y[:, 7 + 6 * nb])
