"""Parameter identification: error functional, Nelder-Mead, nested search and
Levenberg-Marquardt refinement with finite-difference Jacobians."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .constitutive import MaterialParams, get_value, parameter_names, set_values
from .errors import ConfigError, IntegrationError, RatchetError
from .program import LoadingProgram
from .simulator import ExperimentRecord, SolverOptions, simulate_record

# slots that may change sign are optimized in linear space, all others in log space
LINEAR_SLOTS = frozenset({"gamma", "beta", "p1"})


def _is_conservative(name: str) -> bool:
    if name in ("gamma", "beta", "p1", "p2"):
        return True
    return name.startswith("c") and name[1:].isdigit()


# ---------------------------------------------------------------------------
# parameter layout


@dataclass(frozen=True, eq=False)
class ParameterLayout:
    """Binds the slots of a parameter vector to fields of a template.

    Fields not listed in ``names`` keep their template value and are not
    identified (elastic and thermal constants always belong here, as does
    the radius of the unbounded OW1 branch).
    """

    template: MaterialParams
    names: tuple[str, ...]

    def __post_init__(self):
        allowed = parameter_names(self.template)
        bad = [n for n in self.names if n not in allowed]
        if bad:
            raise ConfigError(f"not identifiable for {self.template.kind}: {bad}")
        if len(set(self.names)) != len(self.names):
            raise ConfigError("duplicate parameter names in layout")
        object.__setattr__(self, "names", tuple(self.names))

    @classmethod
    def for_params(cls, template: MaterialParams, fixed: Sequence[str] = ()) -> ParameterLayout:
        return cls(template, tuple(n for n in parameter_names(template) if n not in set(fixed)))

    @property
    def n(self) -> int:
        return len(self.names)

    @property
    def log_mask(self) -> np.ndarray:
        return np.array([n not in LINEAR_SLOTS for n in self.names])

    @property
    def conservative_mask(self) -> np.ndarray:
        return np.array([_is_conservative(n) for n in self.names])

    def index(self, name: str) -> int:
        try:
            return self.names.index(name)
        except ValueError:
            raise ConfigError(f"{name!r} is not a free slot of this layout") from None

    def values(self, p: MaterialParams) -> np.ndarray:
        return np.array([get_value(p, n) for n in self.names])

    def to_params(self, values: np.ndarray) -> MaterialParams:
        values = np.asarray(values, dtype=float)
        if values.shape != (self.n,):
            raise ConfigError(f"expected {self.n} parameter values, got shape {values.shape}")
        return set_values(self.template, dict(zip(self.names, values)))


@dataclass(frozen=True, eq=False)
class ParameterVector:
    values: np.ndarray
    layout: ParameterLayout

    def __post_init__(self):
        v = np.array(self.values, dtype=float).reshape(-1)
        if v.shape != (self.layout.n,):
            raise ConfigError(f"expected {self.layout.n} values, got {v.size}")
        v.setflags(write=False)
        object.__setattr__(self, "values", v)

    @classmethod
    def from_material_params(cls, p: MaterialParams, layout: ParameterLayout) -> ParameterVector:
        return cls(layout.values(p), layout)

    def to_material_params(self) -> MaterialParams:
        return self.layout.to_params(self.values)

    @property
    def names(self) -> tuple[str, ...]:
        return self.layout.names

    def with_value(self, name: str, value: float) -> ParameterVector:
        v = self.values.copy()
        v[self.layout.index(name)] = value
        return ParameterVector(v, self.layout)

    def as_dict(self) -> dict[str, float]:
        return {n: float(v) for n, v in zip(self.names, self.values)}

    def partition(self) -> tuple[np.ndarray, np.ndarray]:
        """Return the conservative and dissipative parts."""
        m = self.layout.conservative_mask
        return self.values[m], self.values[~m]


# ---------------------------------------------------------------------------
# least-squares problems


def weighted_square(r: np.ndarray, weight) -> float:
    """``r . W . r`` for ``W`` given as ``None`` (identity), a diagonal or a matrix."""
    r = np.asarray(r, dtype=float)
    if weight is None:
        return float(np.dot(r, r))
    w = np.asarray(weight)
    if w.ndim == 1:
        return float(np.dot(r * w, r))
    return float(r @ (w @ r))


def _apply_weight(weight, a: np.ndarray) -> np.ndarray:
    if weight is None:
        return a
    w = np.asarray(weight)
    if w.ndim == 1:
        return w[:, None] * a if a.ndim == 2 else w * a
    return w @ a


def _check_weight(weight, n: int):
    if weight is None:
        return None
    w = np.asarray(weight, dtype=float)
    if w.ndim == 1:
        if w.shape != (n,) or np.any(w <= 0):
            raise ConfigError("diagonal weights must be positive and match the data length")
        return w
    if w.shape != (n, n) or not np.allclose(w, w.T):
        raise ConfigError("weighting matrix must be square, symmetric and match the data length")
    try:
        np.linalg.cholesky(w)
    except np.linalg.LinAlgError:
        raise ConfigError("weighting matrix is not positive definite") from None
    return w


class LeastSquaresProblem:
    """Base for ``Phi(x) = (Exp - Mod(x)) . W . (Exp - Mod(x))``.

    Subclasses provide :meth:`response`; ``log_mask`` marks slots that are
    kept positive by optimizing their logarithm and ``conservative_mask``
    marks the inner block of the nested search.
    """

    names: tuple[str, ...]
    exp: np.ndarray
    weight: np.ndarray | None
    log_mask: np.ndarray
    conservative_mask: np.ndarray

    def response(self, x: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    @property
    def n(self) -> int:
        return len(self.names)

    def residual(self, x: np.ndarray) -> np.ndarray:
        return self.exp - self.response(x)

    def phi(self, x: np.ndarray) -> float:
        return weighted_square(self.residual(x), self.weight)

    @property
    def phi_scale(self) -> float:
        """``Exp . W . Exp``, the natural magnitude of the error functional."""
        return weighted_square(self.exp, self.weight)


class FunctionProblem(LeastSquaresProblem):
    """Least-squares problem around an arbitrary response function."""

    def __init__(
        self,
        fun: Callable[[np.ndarray], np.ndarray],
        exp,
        weight=None,
        names: Sequence[str] | None = None,
        log_mask=None,
        conservative_mask=None,
    ):
        self.fun = fun
        self.exp = np.asarray(exp, dtype=float)
        self.weight = _check_weight(weight, len(self.exp))
        n = len(names) if names is not None else len(np.atleast_1d(log_mask)) if log_mask is not None else None
        if n is None:
            raise ConfigError("give names or log_mask to fix the parameter count")
        self.names = tuple(names) if names is not None else tuple(f"x{i}" for i in range(n))
        self.log_mask = np.zeros(n, bool) if log_mask is None else np.asarray(log_mask, bool)
        self.conservative_mask = np.ones(n, bool) if conservative_mask is None else np.asarray(conservative_mask, bool)

    def response(self, x):
        return np.asarray(self.fun(np.asarray(x, dtype=float)), dtype=float)


class IdentificationProblem(LeastSquaresProblem):
    """Simulated extrema of several loading programs against recorded data.

    Parameters
    ----------
    tests
        ``(program, record)`` pairs; the data vector concatenates the
        interleaved extrema of every record in order.
    layout
        Free slots and the template holding every fixed constant.
    weight
        ``None`` for the identity, a positive diagonal or an SPD matrix.
    """

    def __init__(
        self,
        tests: Sequence[tuple[LoadingProgram, ExperimentRecord]],
        layout: ParameterLayout,
        weight=None,
        solver: SolverOptions = SolverOptions(),
    ):
        if not tests:
            raise ConfigError("an identification problem needs at least one test")
        for prog, rec in tests:
            if prog.n_cycles != rec.n_cycles:
                raise ConfigError(f"program has {prog.n_cycles} cycles but its record has {rec.n_cycles}")
        self.tests = tuple(tests)
        self.layout = layout
        self.solver = solver
        self.exp = np.concatenate([rec.vector() for _, rec in self.tests])
        if len(self.exp) < layout.n:
            raise ConfigError("fewer data points than parameters")
        self.weight = _check_weight(weight, len(self.exp))
        self.names = layout.names
        self.log_mask = layout.log_mask
        self.conservative_mask = layout.conservative_mask

    @property
    def kind(self):
        return self.layout.template.kind

    def with_data(self, exp: np.ndarray) -> IdentificationProblem:
        """Same programs and layout with a replaced data vector."""
        exp = np.asarray(exp, dtype=float)
        if exp.shape != self.exp.shape:
            raise ConfigError("replacement data has the wrong length")
        tests, pos = [], 0
        for prog, rec in self.tests:
            k = 2 * rec.n_cycles
            tests.append((prog, rec.with_vector(exp[pos : pos + k])))
            pos += k
        return IdentificationProblem(tests, self.layout, self.weight, self.solver)

    def response(self, x) -> np.ndarray:
        params = self.layout.to_params(x)
        try:
            parts = [simulate_record(params, prog, self.solver).vector() for prog, _ in self.tests]
        except IntegrationError as exc:
            raise IntegrationError(
                str(exc), step=exc.step, time=exc.time, params=ParameterVector(x, self.layout)
            ) from exc
        return np.concatenate(parts)


def _values(p) -> np.ndarray:
    return np.asarray(p.values if isinstance(p, ParameterVector) else p, dtype=float)


def model_response(p, problem: LeastSquaresProblem) -> np.ndarray:
    return problem.response(_values(p))


def error_functional(p, problem: LeastSquaresProblem) -> float:
    return problem.phi(_values(p))


# ---------------------------------------------------------------------------
# Nelder-Mead


@dataclass(frozen=True)
class NelderMeadOptions:
    """Simplex settings.

    ``initial_step`` is relative (``0.05`` = 5 %); zero coordinates get
    ``zero_step`` instead. Convergence needs both the simplex diameter
    (max-norm) below ``xatol`` and the spread of values below ``fatol``.
    """

    initial_step: float = 0.05
    zero_step: float = 2.5e-4
    xatol: float = 1e-8
    fatol: float = 1e-14
    max_evals: int = 5000


@dataclass(frozen=True, eq=False)
class NelderMeadResult:
    x: np.ndarray
    fun: float
    n_evals: int
    n_iter: int
    converged: bool


def _safe(f: Callable, x: np.ndarray) -> float:
    try:
        v = float(f(x))
    except (RatchetError, ArithmeticError, np.linalg.LinAlgError):
        return math.inf
    return v if math.isfinite(v) else math.inf


def nelder_mead(
    f: Callable[[np.ndarray], float],
    x0,
    opts: NelderMeadOptions = NelderMeadOptions(),
    steps=None,
) -> NelderMeadResult:
    """Minimize ``f`` with the Nelder-Mead simplex method.

    Parameters
    ----------
    steps
        Optional absolute edge lengths of the initial simplex, overriding
        ``opts.initial_step``.

    Notes
    -----
    Failing or non-finite evaluations count as ``+inf``. Among vertices
    with equal values the older one ranks first, so ties never displace an
    incumbent and the result is never worse than ``x0``.
    """
    x0 = np.asarray(x0, dtype=float).reshape(-1)
    n = x0.size
    f0 = _safe(f, x0)
    if not math.isfinite(f0):
        raise ConfigError("objective is not finite at the starting point")
    if steps is None:
        steps = np.where(x0 != 0.0, opts.initial_step * np.abs(x0), opts.zero_step)
    steps = np.broadcast_to(np.asarray(steps, dtype=float), (n,))
    pts = np.tile(x0, (n + 1, 1))
    for i in range(n):
        pts[i + 1, i] += steps[i]
    vals = np.empty(n + 1)
    vals[0] = f0
    for i in range(1, n + 1):
        vals[i] = _safe(f, pts[i])
    birth = np.arange(n + 1)
    born = n + 1
    evals = n + 1
    it = 0
    converged = False
    while True:
        order = np.lexsort((birth, vals))
        pts, vals, birth = pts[order], vals[order], birth[order]
        spread = np.max(np.abs(vals[1:] - vals[0])) if n else 0.0
        diameter = np.max(np.abs(pts[1:] - pts[0])) if n else 0.0
        if diameter <= opts.xatol and spread <= opts.fatol:
            converged = True
            break
        if evals >= opts.max_evals:
            break
        it += 1
        centroid = pts[:-1].mean(axis=0)
        worst = pts[-1]
        xr = centroid + (centroid - worst)
        fr = _safe(f, xr)
        evals += 1
        new_x, new_f = None, None
        if fr < vals[0]:
            xe = centroid + 2.0 * (centroid - worst)
            fe = _safe(f, xe)
            evals += 1
            new_x, new_f = (xe, fe) if fe < fr else (xr, fr)
        elif fr < vals[-2]:
            new_x, new_f = xr, fr
        else:
            if fr < vals[-1]:
                xc = centroid + 0.5 * (xr - centroid)
            else:
                xc = centroid + 0.5 * (worst - centroid)
            fc = _safe(f, xc)
            evals += 1
            if fc < min(fr, vals[-1]):
                new_x, new_f = xc, fc
        if new_x is not None:
            pts[-1], vals[-1], birth[-1] = new_x, new_f, born
            born += 1
        else:
            for i in range(1, n + 1):
                pts[i] = pts[0] + 0.5 * (pts[i] - pts[0])
                vals[i] = _safe(f, pts[i])
                birth[i] = born
                born += 1
            evals += n
    return NelderMeadResult(pts[0].copy(), float(vals[0]), evals, it, converged)


# ---------------------------------------------------------------------------
# nested identification


def to_internal(x: np.ndarray, log_mask: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if np.any(x[log_mask] <= 0):
        raise ConfigError("log-space slots need positive values")
    return np.where(log_mask, np.log(np.where(log_mask, x, 1.0)), x)


def from_internal(u: np.ndarray, log_mask: np.ndarray) -> np.ndarray:
    return np.where(log_mask, np.exp(np.where(log_mask, u, 0.0)), u)


@dataclass(frozen=True)
class NestedOptions:
    """Budgets of the two simplex loops.

    ``fatol`` is relative to ``Phi(x0)``; ``xatol`` acts on the internal
    (log or linear) coordinates.
    """

    initial_step: float = 0.05
    inner_xatol: float = 1e-7
    outer_xatol: float = 1e-6
    fatol: float = 1e-12
    inner_max_evals: int = 1500
    outer_max_evals: int = 400


@dataclass(frozen=True, eq=False)
class NestedResult:
    x: np.ndarray
    phi: float
    phi_start: float
    n_evals: int
    outer_iterations: int


def _simplex_steps(u: np.ndarray, log_mask: np.ndarray, rel: float, zero_step: float = 2.5e-4) -> np.ndarray:
    lin = np.where(u != 0.0, rel * np.abs(u), zero_step)
    return np.where(log_mask, math.log1p(rel), lin)


def nested_identify(problem: LeastSquaresProblem, p0, opts: NestedOptions = NestedOptions()) -> NestedResult:
    """Two-level simplex search.

    For every candidate dissipative part the conservative part is optimized
    first (inner loop, warm-started from the best conservative part found so
    far); the outer loop minimizes that partial minimum over the dissipative
    part.
    """
    x0 = _values(p0)
    cmask = problem.conservative_mask
    lmask = problem.log_mask
    u0 = to_internal(x0, lmask)
    uc0, uk0 = u0[cmask], u0[~cmask]
    phi0 = problem.phi(x0)
    ftol = opts.fatol * max(phi0, np.finfo(float).tiny)
    inner_opts = NelderMeadOptions(xatol=opts.inner_xatol, fatol=ftol, max_evals=opts.inner_max_evals)
    outer_opts = NelderMeadOptions(xatol=opts.outer_xatol, fatol=ftol, max_evals=opts.outer_max_evals)
    evals = [0]

    def assemble(uc, uk):
        u = np.empty_like(u0)
        u[cmask] = uc
        u[~cmask] = uk
        return u

    best = {"phi": phi0, "uc": uc0.copy(), "uk": uk0.copy()}

    def inner(uk):
        def f(uc):
            evals[0] += 1
            return problem.phi(from_internal(assemble(uc, uk), lmask))

        start = best["uc"]
        res = nelder_mead(f, start, inner_opts, steps=_simplex_steps(start, lmask[cmask], opts.initial_step))
        return res

    def outer(uk):
        res = inner(uk)
        if res.fun < best["phi"]:
            best.update(phi=res.fun, uc=res.x.copy(), uk=np.array(uk, dtype=float))
        return res.fun

    if np.any(~cmask):
        out = nelder_mead(outer, uk0, outer_opts, steps=_simplex_steps(uk0, lmask[~cmask], opts.initial_step))
        iters = out.n_iter
    else:
        outer(uk0)
        iters = 0
    x = from_internal(assemble(best["uc"], best["uk"]), lmask)
    return NestedResult(x, float(best["phi"]), float(phi0), evals[0], iters)


# ---------------------------------------------------------------------------
# Jacobian and Levenberg-Marquardt


def jacobian_fd(p, problem: LeastSquaresProblem, rel_step: float = 1e-5, floor: float = 1e-3) -> np.ndarray:
    """Central-difference Jacobian of the model response.

    The step of slot ``i`` is ``rel_step * max(|p_i|, floor)``; slots that
    must stay positive use the purely relative step ``rel_step * p_i``.
    """
    x = _values(p)
    J = np.empty((len(problem.exp), x.size))
    lmask = problem.log_mask
    for i in range(x.size):
        h = rel_step * (x[i] if lmask[i] else max(abs(x[i]), floor))
        xp = x.copy()
        xm = x.copy()
        xp[i] += h
        xm[i] -= h
        J[:, i] = (problem.response(xp) - problem.response(xm)) / (2.0 * h)
    return J


@dataclass(frozen=True)
class RefineOptions:
    """Levenberg-Marquardt settings.

    The gradient test is applied in relative coordinates,
    ``max_i |p_i dPhi/dp_i| <= grad_tol * (Exp . W . Exp)``.
    """

    grad_tol: float = 1e-8
    lam0: float = 1e-3
    lam_factor: float = 10.0
    lam_max: float = 1e12
    max_iter: int = 50
    rel_step: float = 1e-5
    floor: float = 1e-3
    step_tol: float = 1e-14
    max_log_step: float = 0.5
    try_gauss_newton: bool = False


@dataclass(frozen=True, eq=False)
class RefineStep:
    step_norm: float  # max |dp_i / p_i|
    phi_before: float
    phi_after: float
    lam: float


@dataclass(frozen=True, eq=False)
class RefineResult:
    x: np.ndarray
    jacobian: np.ndarray
    mod: np.ndarray
    phi: float
    grad: np.ndarray  # relative-coordinate gradient p_i dPhi/dp_i
    iterations: int
    converged: bool
    history: list = field(default_factory=list)
    condition: float = math.nan
    message: str = ""

    @property
    def grad_norm(self) -> float:
        return float(np.max(np.abs(self.grad))) if self.grad.size else 0.0


def _scale(x: np.ndarray, floor: float) -> np.ndarray:
    return np.maximum(np.abs(x), floor)


def gauss_newton_step(J: np.ndarray, r: np.ndarray, weight=None, lam: float = 0.0) -> np.ndarray | None:
    """Solve ``(J'WJ + lam diag(J'WJ)) d = J'W r``; ``None`` if singular."""
    WJ = _apply_weight(weight, J)
    A = J.T @ WJ
    g = WJ.T @ r
    if lam > 0.0:
        A = A + lam * np.diag(np.diag(A))
    try:
        L = np.linalg.cholesky(A)
    except np.linalg.LinAlgError:
        return None
    d = np.linalg.solve(L.T, np.linalg.solve(L, g))
    return d if np.all(np.isfinite(d)) else None


def gauss_newton_refine(p, problem: LeastSquaresProblem, opts: RefineOptions = RefineOptions()) -> RefineResult:
    """Refine ``p`` until the error functional has a vanishing gradient.

    Steps are taken in the internal coordinates (logarithms of positive
    slots), so every trial point is admissible. Marquardt damping ``lam``
    is raised by ``lam_factor`` until a step that lowers ``Phi`` and moves
    no logarithm by more than ``max_log_step`` is found, and lowered again
    after acceptance. With ``try_gauss_newton`` the undamped step is
    attempted first. The returned Jacobian is in physical coordinates.
    """
    x = _values(p).copy()
    lmask = problem.log_mask
    scale_phi = problem.phi_scale
    mod = problem.response(x)
    r = problem.exp - mod
    phi = weighted_square(r, problem.weight)
    lam = opts.lam0
    history: list[RefineStep] = []
    it = 0
    converged = False
    message = ""

    def gradient(J, r, x):
        return -2.0 * (_apply_weight(problem.weight, J).T @ r) * _scale(x, opts.floor)

    J = jacobian_fd(x, problem, opts.rel_step, opts.floor)
    grad = gradient(J, r, x)
    while True:
        if np.max(np.abs(grad), initial=0.0) <= opts.grad_tol * scale_phi:
            converged = True
            break
        if it >= opts.max_iter:
            message = "iteration limit reached"
            break
        it += 1
        u = to_internal(x, lmask)
        Ju = J * np.where(lmask, x, 1.0)
        accepted = False
        trial_lams = ([0.0] if opts.try_gauss_newton else []) + [lam * opts.lam_factor**k for k in range(64)]
        for lam_try in trial_lams:
            if lam_try > opts.lam_max:
                break
            d = gauss_newton_step(Ju, r, problem.weight, lam_try)
            if d is None:
                continue
            if float(np.max(np.abs(d[lmask]), initial=0.0)) > opts.max_log_step:
                continue
            xn = from_internal(u + d, lmask)
            try:
                mod_n = problem.response(xn)
            except RatchetError:
                continue
            rn = problem.exp - mod_n
            phin = weighted_square(rn, problem.weight)
            if phin < phi:
                rel = float(np.max(np.abs(xn - x) / _scale(x, opts.floor)))
                history.append(RefineStep(rel, phi, phin, lam_try))
                x, mod, r, phi = xn, mod_n, rn, phin
                if lam_try > 0.0:
                    lam = max(lam_try / opts.lam_factor, opts.lam0 * 1e-6)
                accepted = True
                break
        if accepted:
            J = jacobian_fd(x, problem, opts.rel_step, opts.floor)
            grad = gradient(J, r, x)
            if history[-1].step_norm <= opts.step_tol:
                converged = bool(np.max(np.abs(grad), initial=0.0) <= opts.grad_tol * scale_phi)
                message = "" if converged else "step below tolerance"
                break
        else:
            message = "no descent step found"
            break
    A = J.T @ _apply_weight(problem.weight, J)
    cond = float(np.linalg.cond(A)) if A.size else math.nan
    return RefineResult(x, J, mod, phi, grad, it, converged, history, cond, message)
