"""Quasi-Monte-Carlo error sensitivity of identified parameters.

Noise draws are smooth sine-mode perturbations of the data whose
coefficients come from a Sobol sequence. Every draw is refitted with one
Gauss-Newton step around the optimum (a precomputed linear map), and the
spread of the refits is measured by the largest strain discrepancy they
cause on a reference stress program.
"""

from __future__ import annotations

import math
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.linalg import solve_triangular
from scipy.stats import qmc

from .constitutive import MaterialParams
from .errors import ConfigError, RankDeficiencyError
from .identify import (
    IdentificationProblem,
    LeastSquaresProblem,
    ParameterLayout,
    ParameterVector,
    _apply_weight,
    jacobian_fd,
)
from .program import LoadingProgram
from .simulator import ExperimentRecord, SolverOptions, integrate

SOBOL_MAX_DIM = 21201
SOBOL_BITS = 30
UNIFORM_EPS = 1e-12


# ---------------------------------------------------------------------------
# noise


@dataclass(frozen=True)
class NoiseModel:
    """Sine-mode noise ``sum_k sigma_k sin(k pi t / T)`` with ``sigma_k ~ N(0, sigma^2)``."""

    sigma: float = 1e-6
    n_modes: int = 20

    def __post_init__(self):
        if not self.sigma >= 0:
            raise ConfigError("noise sigma must be non-negative")
        if self.n_modes < 1:
            raise ConfigError("n_modes must be at least 1")


def mode_matrix(times: np.ndarray, duration: float, n_modes: int) -> np.ndarray:
    """``M[i, k-1] = sin(k pi t_i / T)``."""
    if not duration > 0:
        raise ConfigError("noise modes need a positive duration")
    t = np.asarray(times, dtype=float)
    k = np.arange(1, n_modes + 1)
    return np.sin(np.pi * np.outer(t / duration, k))


def problem_modes(records: Sequence[ExperimentRecord], n_modes: int) -> np.ndarray:
    """Block-diagonal mode matrix: each test has its own ``n_modes`` coefficients."""
    blocks = [mode_matrix(r.turning_times, r.duration, n_modes) for r in records]
    rows = sum(b.shape[0] for b in blocks)
    out = np.zeros((rows, n_modes * len(blocks)))
    r0 = 0
    for j, b in enumerate(blocks):
        out[r0 : r0 + b.shape[0], j * n_modes : (j + 1) * n_modes] = b
        r0 += b.shape[0]
    return out


def synthesize_noise(coeffs, record: ExperimentRecord) -> np.ndarray:
    """Noise vector for one record, interleaved like :meth:`ExperimentRecord.vector`."""
    coeffs = np.asarray(coeffs, dtype=float)
    M = mode_matrix(record.turning_times, record.duration, coeffs.size)
    return M @ coeffs


# ---------------------------------------------------------------------------
# Sobol draws


@dataclass(frozen=True)
class SobolConfig:
    """Sobol sequence slicing.

    Row ``j`` (0-based) is sequence point ``skip + j * (leap + 1)``, i.e.
    ``skip`` leading points are dropped and ``leap`` points are passed over
    between consecutive rows. With ``antithetic`` set, ``n_draws / 2`` rows
    are generated and each is followed by its negation.
    """

    dimensions: int = 40
    skip: int = 1000
    leap: int = 300
    n_draws: int = 10000
    antithetic: bool = False

    def __post_init__(self):
        if self.dimensions < 1 or self.n_draws < 1:
            raise ConfigError("dimensions and n_draws must be positive")
        if self.skip < 0 or self.leap < 0:
            raise ConfigError("skip and leap must be non-negative")
        if self.dimensions > SOBOL_MAX_DIM:
            raise ConfigError(f"the Sobol generator supports at most {SOBOL_MAX_DIM} dimensions")
        if self.antithetic and self.n_draws % 2:
            raise ConfigError("antithetic sampling needs an even number of draws")


def _direction_integers(width: int, n_bits: int) -> np.ndarray:
    """Direction integers ``v_b`` (``b < n_bits``) of the unscrambled generator.

    scipy emits points in Gray-code order, point ``k`` being the XOR of
    ``v_b`` over the set bits of ``k ^ (k >> 1)``. Point ``2^b`` therefore
    equals ``v_b ^ v_(b-1)``, which is unwound here.
    """
    eng = qmc.Sobol(d=width, scramble=False, bits=SOBOL_BITS)
    v = np.zeros((n_bits, width), dtype=np.uint64)
    pos = 0
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", UserWarning)
        for b in range(n_bits):
            eng.fast_forward((1 << b) - pos)
            pt = np.rint(eng.random(1)[0] * 2.0**SOBOL_BITS).astype(np.uint64)
            pos = (1 << b) + 1
            v[b] = pt ^ v[b - 1] if b else pt
    return v


def sobol_uniforms(cfg: SobolConfig, n_rows: int | None = None) -> np.ndarray:
    """Sobol points in their natural order, sliced by ``skip`` and ``leap``.

    Point ``n`` is the XOR of the direction integers selected by the binary
    digits of ``n``. An odd dimension count is padded by one column so that
    the Box-Muller pairs are complete.
    """
    n_rows = cfg.n_draws if n_rows is None else n_rows
    width = cfg.dimensions + cfg.dimensions % 2
    idx = cfg.skip + np.arange(n_rows, dtype=np.int64) * (cfg.leap + 1)
    top = int(idx[-1]) if n_rows else 0
    if top >= 1 << SOBOL_BITS:
        raise ConfigError(f"Sobol index {top} exceeds the generator range 2^{SOBOL_BITS}")
    v = _direction_integers(width, max(top.bit_length(), 1))
    acc = np.zeros((n_rows, width), dtype=np.uint64)
    for b in range(v.shape[0]):
        acc[((idx >> b) & 1).astype(bool)] ^= v[b]
    return acc.astype(float) / 2.0**SOBOL_BITS


def box_muller(u: np.ndarray) -> np.ndarray:
    """Map uniform pairs ``(u1, u2)`` of consecutive columns to standard normals."""
    u = np.clip(np.asarray(u, dtype=float), UNIFORM_EPS, 1.0 - UNIFORM_EPS)
    if u.shape[-1] % 2:
        raise ConfigError("Box-Muller needs an even number of columns")
    u1 = u[..., 0::2]
    u2 = u[..., 1::2]
    rad = np.sqrt(-2.0 * np.log(u1))
    out = np.empty_like(u)
    out[..., 0::2] = rad * np.cos(2.0 * np.pi * u2)
    out[..., 1::2] = rad * np.sin(2.0 * np.pi * u2)
    return out


def sobol_normals(cfg: SobolConfig) -> np.ndarray:
    """Standard-normal draw matrix of shape ``(n_draws, dimensions)``."""
    rows = cfg.n_draws // 2 if cfg.antithetic else cfg.n_draws
    z = box_muller(sobol_uniforms(cfg, rows))[:, : cfg.dimensions]
    if cfg.antithetic:
        out = np.empty((cfg.n_draws, cfg.dimensions))
        out[0::2] = z
        out[1::2] = -z
        return out
    return z


# ---------------------------------------------------------------------------
# fast refit


def weighted_qr(J: np.ndarray, weight=None) -> tuple[np.ndarray, np.ndarray, np.ndarray | None]:
    """Thin QR of ``L^T J`` where ``W = L L^T``; returns ``(Q, R, L^T)``."""
    if weight is None:
        Q, R = np.linalg.qr(J)
        return Q, R, None
    w = np.asarray(weight, dtype=float)
    Lt = np.sqrt(w) if w.ndim == 1 else np.linalg.cholesky(w).T
    Q, R = np.linalg.qr(_apply_weight(Lt, J))
    return Q, R, Lt


def check_rank(
    R: np.ndarray, names: Sequence[str] | None = None, tol: float = 1e-10, col_norms: np.ndarray | None = None
) -> np.ndarray:
    """Relative size of the diagonal of ``R``; raise if one falls below ``tol``.

    With ``col_norms`` (the norms of the factorized columns) each ``|R_ii|``
    is measured against its own column, which makes the test independent of
    parameter units: the ratio is the sine of the angle between column ``i``
    and the span of the preceding ones. Otherwise ``max |R_jj|`` is used.
    """
    d = np.abs(np.diag(R))
    if col_norms is not None:
        cn = np.asarray(col_norms, dtype=float)
        ratio = np.divide(d, cn, out=np.zeros_like(d), where=cn > 0)
    else:
        ref = d.max() if d.size else 0.0
        ratio = d / ref if ref > 0 else np.zeros_like(d)
    bad = np.flatnonzero(ratio <= tol)
    if bad.size:
        i = int(bad[0])
        name = names[i] if names is not None else None
        raise RankDeficiencyError(
            f"Jacobian is rank deficient at column {i}" + (f" ({name})" if name else "")
            + f": |R_ii| / max |R_jj| = {ratio[i]:.3g}",
            column=i,
            name=name,
            diag_ratio=float(ratio[i]),
        )
    return ratio


def fast_refit(qr_of_J, p_star, mod_at_star, exp_vector, noise, weight=None) -> np.ndarray:
    """Minimizer of the linearized noisy objective through the QR factors.

    ``qr_of_J`` is ``(Q, R)`` of ``L^T J`` (plain ``J`` for identity weights).
    Computes ``p* + R^{-1} Q^T L^T (Exp + Noise - Mod(p*))``, which equals
    ``(J^T W J)^{-1} J^T W (Exp + Noise - Mod(p*) + J p*)``.
    """
    Q, R = qr_of_J
    rhs = np.asarray(exp_vector, float) + np.asarray(noise, float) - np.asarray(mod_at_star, float)
    if weight is not None:
        w = np.asarray(weight, dtype=float)
        rhs = np.sqrt(w) * rhs if w.ndim == 1 else np.linalg.cholesky(w).T @ rhs
    return np.asarray(p_star, float) + solve_triangular(R, Q.T @ rhs)


def normal_equations_refit(J, p_star, mod_at_star, exp_vector, noise, weight=None) -> np.ndarray:
    """Same linearized minimizer solved through ``J^T W J`` directly."""
    J = np.asarray(J, dtype=float)
    A = np.asarray(exp_vector, float) + np.asarray(noise, float) - np.asarray(mod_at_star, float) + J @ p_star
    WJ = _apply_weight(weight, J)
    return np.linalg.solve(J.T @ WJ, WJ.T @ A)


@dataclass(frozen=True, eq=False)
class RefitOperator:
    """Precomputed linear map from noise coefficients to parameter shifts.

    ``G = R^{-1} Q^T L^T`` maps a data perturbation to the Gauss-Newton step;
    ``GM = G M`` maps mode coefficients to parameter shifts. ``offset`` is
    ``G (Exp - Mod(p*))``, the step that remains at zero noise; it vanishes
    when the gradient at ``p*`` is exactly zero.
    """

    p_star: np.ndarray
    G: np.ndarray
    GM: np.ndarray
    offset: np.ndarray
    r_diag_ratio: np.ndarray

    @classmethod
    def build(
        cls, J, p_star, mod_at_star, exp_vector, modes: np.ndarray, weight=None, names=None, rank_tol: float = 1e-10
    ) -> RefitOperator:
        J = np.asarray(J, dtype=float)
        Q, R, Lt = weighted_qr(J, weight)
        WJ = J if Lt is None else _apply_weight(Lt, J)
        ratio = check_rank(R, names, rank_tol, np.linalg.norm(WJ, axis=0))
        QtLt = Q.T if Lt is None else (_apply_weight(Lt, Q)).T if Lt.ndim == 1 else Q.T @ Lt
        G = solve_triangular(R, QtLt)
        GM = G @ modes
        offset = G @ (np.asarray(exp_vector, float) - np.asarray(mod_at_star, float))
        return cls(np.asarray(p_star, float), G, GM, offset, ratio)

    def shifts(self, coeffs: np.ndarray) -> np.ndarray:
        """``GM . c`` for every row ``c`` of ``coeffs``, accumulated in a fixed order."""
        coeffs = np.atleast_2d(np.asarray(coeffs, dtype=float))
        acc = np.zeros((coeffs.shape[0], self.GM.shape[0]))
        for k in range(self.GM.shape[1]):
            acc += coeffs[:, k : k + 1] * self.GM[:, k]
        return acc


# ---------------------------------------------------------------------------
# mechanics-based metric


def _params(p, layout: ParameterLayout | None) -> MaterialParams:
    if isinstance(p, MaterialParams):
        return p
    if isinstance(p, ParameterVector):
        return p.to_material_params()
    if layout is None:
        raise ConfigError("a layout is needed to interpret a raw parameter array")
    return layout.to_params(np.asarray(p, dtype=float))


def strain_history(p, program: LoadingProgram, layout=None, solver: SolverOptions = SolverOptions()) -> np.ndarray:
    return integrate(_params(p, layout), program, solver).strain


def mechanics_distance(
    p1, p2, metric_program: LoadingProgram, layout: ParameterLayout | None = None, solver: SolverOptions = SolverOptions()
) -> float:
    """Largest axial strain discrepancy of two parameter sets on the metric program."""
    e1 = strain_history(p1, metric_program, layout, solver)
    e2 = strain_history(p2, metric_program, layout, solver)
    return float(np.max(np.abs(e1 - e2)))


def strain_sensitivity(
    p_star,
    metric_program: LoadingProgram,
    layout: ParameterLayout,
    solver: SolverOptions = SolverOptions(),
    rel_step: float = 1e-5,
    floor: float = 1e-3,
) -> np.ndarray:
    """Central-difference ``d eps11 / d p`` on the metric grid, one column per slot."""
    x = np.asarray(p_star.values if isinstance(p_star, ParameterVector) else p_star, dtype=float)
    cols = []
    for i in range(x.size):
        h = rel_step * max(abs(x[i]), floor)
        xp = x.copy()
        xm = x.copy()
        xp[i] += h
        xm[i] -= h
        ep = strain_history(xp, metric_program, layout, solver)
        em = strain_history(xm, metric_program, layout, solver)
        cols.append((ep - em) / (2.0 * h))
    return np.column_stack(cols)


def linearized_distance(d_eps_dp: np.ndarray, dp) -> np.ndarray | float:
    """``max_t |dEps/dp(t) . dp|``; a 2-D ``dp`` gives one distance per row."""
    S = np.asarray(d_eps_dp, dtype=float)
    dp = np.asarray(dp, dtype=float)
    if dp.ndim == 1:
        if dp.shape[0] != S.shape[1]:
            raise ConfigError("dp does not match the number of sensitivity columns")
        return float(np.max(np.abs(S @ dp))) if S.shape[0] else 0.0
    return _batch_distance(S, dp)


def _batch_distance(S: np.ndarray, dP: np.ndarray) -> np.ndarray:
    if dP.shape[1] != S.shape[1]:
        raise ConfigError("dp does not match the number of sensitivity columns")
    acc = np.zeros((S.shape[0], dP.shape[0]))
    for i in range(S.shape[1]):
        acc += S[:, i : i + 1] * dP[:, i]
    return np.max(np.abs(acc), axis=0) if S.shape[0] else np.zeros(dP.shape[0])


def cloud_size(p_star, draws, d_eps_dp) -> float:
    draws = np.atleast_2d(np.asarray(draws, dtype=float))
    if draws.shape[0] == 0:
        raise ConfigError("cloud_size needs at least one draw")
    return float(np.mean(_batch_distance(np.asarray(d_eps_dp, float), draws - np.asarray(p_star, float))))


def correlation_matrix(J, weight=None, names: Sequence[str] | None = None) -> np.ndarray:
    """``Corr_ij = P_ij / sqrt(P_ii P_jj)`` with ``P = J^T W J``."""
    J = np.asarray(J, dtype=float)
    P = J.T @ _apply_weight(weight, J)
    d = np.diag(P).copy()
    zero = np.flatnonzero(d <= 0.0)
    if zero.size:
        i = int(zero[0])
        raise RankDeficiencyError(
            f"parameter column {i} has no influence on the response", column=i,
            name=None if names is None else names[i], diag_ratio=0.0,
        )
    C = P / np.sqrt(np.outer(d, d))
    C = np.clip(0.5 * (C + C.T), -1.0, 1.0)
    np.fill_diagonal(C, 1.0)
    return C


def max_offdiagonal(C: np.ndarray) -> float:
    C = np.asarray(C)
    if C.shape[0] < 2:
        return 0.0
    return float(np.max(np.abs(C[~np.eye(C.shape[0], dtype=bool)])))


# ---------------------------------------------------------------------------
# pipeline


@dataclass(frozen=True, eq=False)
class ParameterCloud:
    """Result of a sensitivity run.

    ``draws`` holds one refitted parameter vector per noise draw and
    ``distances`` their linearized distances from the cloud center.
    ``center_offset`` is the linearized distance between ``p_star`` and the
    zero-noise refit; it should be negligible next to ``cloud_size``.
    """

    names: tuple[str, ...]
    p_star: np.ndarray
    draws: np.ndarray
    distances: np.ndarray
    cloud_size: float
    corr: np.ndarray
    sigma: float
    center_offset: float
    r_diag_ratio: np.ndarray
    exact_distances: np.ndarray = field(default_factory=lambda: np.zeros(0))

    @property
    def n_draws(self) -> int:
        return self.draws.shape[0]


def run_sensitivity(
    problem: LeastSquaresProblem,
    p_star,
    noise: NoiseModel,
    sobol: SobolConfig,
    metric_program: LoadingProgram,
    *,
    modes: np.ndarray | None = None,
    jacobian: np.ndarray | None = None,
    mod_star: np.ndarray | None = None,
    d_eps_dp: np.ndarray | None = None,
    layout: ParameterLayout | None = None,
    solver: SolverOptions | None = None,
    workers: int = 1,
    chunk: int = 1000,
    exact_metric: int = 0,
    rank_tol: float = 1e-10,
) -> ParameterCloud:
    """Assemble the parameter cloud of ``p_star``.

    The Jacobian and its QR factorization are built once; each draw then
    costs one small matrix-vector product. Draws are measured from the
    zero-noise refit, which coincides with ``p_star`` when the gradient
    there vanishes. ``workers`` and ``chunk`` only change the schedule;
    results are bitwise identical for any choice. ``exact_metric > 0``
    additionally re-simulates that many leading draws for full distances.
    """
    x = np.asarray(p_star.values if isinstance(p_star, ParameterVector) else p_star, dtype=float)
    names = tuple(problem.names)
    if isinstance(problem, IdentificationProblem):
        layout = layout or problem.layout
        solver = solver or problem.solver
        if modes is None:
            modes = problem_modes([rec for _, rec in problem.tests], noise.n_modes)
    solver = solver or SolverOptions()
    if modes is None:
        raise ConfigError("a mode matrix is required for problems without records")
    if modes.shape[1] != sobol.dimensions:
        raise ConfigError(f"Sobol dimensions {sobol.dimensions} do not match {modes.shape[1]} noise coefficients")
    if modes.shape[0] != len(problem.exp):
        raise ConfigError("mode matrix rows do not match the data length")
    if mod_star is None:
        mod_star = problem.response(x)
    if jacobian is None:
        jacobian = jacobian_fd(x, problem)
    op = RefitOperator.build(jacobian, x, mod_star, problem.exp, modes, problem.weight, names, rank_tol)
    if d_eps_dp is None:
        if layout is None:
            raise ConfigError("a layout is needed to compute strain sensitivities")
        d_eps_dp = strain_sensitivity(x, metric_program, layout, solver)
    corr = correlation_matrix(jacobian, problem.weight, names)
    z = sobol_normals(sobol)
    n = z.shape[0]
    bounds = [(a, min(a + chunk, n)) for a in range(0, n, chunk)]

    def work(b):
        a, e = b
        dP = op.shifts(noise.sigma * z[a:e])
        return dP, _batch_distance(d_eps_dp, dP)

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as ex:
            parts = list(ex.map(work, bounds))
    else:
        parts = [work(b) for b in bounds]
    shifts = np.concatenate([p[0] for p in parts]) if parts else np.zeros((0, x.size))
    dist = np.concatenate([p[1] for p in parts]) if parts else np.zeros(0)
    draws = x + op.offset + shifts
    exact = np.zeros(0)
    if exact_metric > 0:
        if layout is None:
            raise ConfigError("exact distances need a layout")
        base = strain_history(x + op.offset, metric_program, layout, solver)
        exact = np.array(
            [
                np.max(np.abs(strain_history(draws[j], metric_program, layout, solver) - base))
                for j in range(min(exact_metric, n))
            ]
        )
    return ParameterCloud(
        names=names,
        p_star=x,
        draws=draws,
        distances=dist,
        cloud_size=float(np.mean(dist)) if n else 0.0,
        corr=corr,
        sigma=noise.sigma,
        center_offset=float(linearized_distance(d_eps_dp, op.offset)),
        r_diag_ratio=op.r_diag_ratio,
        exact_distances=exact,
    )


def relative_cloud_spread(cloud: ParameterCloud) -> np.ndarray:
    """Standard deviation of each parameter over the cloud relative to ``|p*|``."""
    return np.std(cloud.draws, axis=0) / np.maximum(np.abs(cloud.p_star), math.ulp(1.0))
