"""Compiled stress-controlled uniaxial integrator.

Under uniaxial stress an isotropic J2-type model keeps every deviatoric
tensor parallel to ``n = sqrt(2/3) diag(1, -1/2, -1/2)``. All deviators are
therefore stored through their coordinate along ``n`` (``A = a n`` so that
``|A| = |a|`` and ``A : B = a b``) and the prescribed stress
``diag(sigma, 0, 0)`` is met exactly by construction: the lateral strain is
whatever makes the lateral stresses vanish.

Each step is implicit in the plastic multiplier increment: consistency is
imposed at the end of the step and solved by a safeguarded Newton iteration.
Within a step the flow direction is fixed, so the branch laws become
ordinary differential equations in the multiplier. These are integrated
exactly (AF exponential, OW1 radial clamp) or by fine RK4 (OW2); on a
monotone stress segment a rate-independent response is then independent
of the step size. With a positive viscosity the time discretization is
backward Euler.
"""

from __future__ import annotations

import math

import numpy as np
from numba import njit

SQ23 = math.sqrt(2.0 / 3.0)
INV_SQ6 = 1.0 / math.sqrt(6.0)
MPA = 1.0e6

FAM_AF, FAM_OW1, FAM_OW2 = 0, 1, 2
HARD_NEW, HARD_VOCE = 0, 1

OK = 0
ERR_CAPACITY = 1  # no plastic multiplier restores admissibility
ERR_RADIUS = 2  # K + R <= 0
ERR_NEWTON = 3
ERR_THERMAL = 4

STATUS_TEXT = {
    OK: "ok",
    ERR_CAPACITY: "load exceeds the load-carrying capacity of the model",
    ERR_RADIUS: "yield radius K + R became non-positive",
    ERR_NEWTON: "local corrector did not converge",
    ERR_THERMAL: "temperature or heat capacity became non-positive",
}


@njit(cache=True)
def _hardening(kind, h1, h2, s, seps):
    if kind == HARD_NEW:
        return h1 * s - h2 * seps
    return h1 / h2 * -math.expm1(-h2 * s)


@njit(cache=True)
def _hardening_ds(kind, h1, h2, s):
    if kind == HARD_NEW:
        return h1
    return h1 * math.exp(-h2 * s)


# 5-point Gauss-Legendre nodes and weights on [0, 1]
_GL_X = np.array([0.04691007703066800, 0.23076534494715845, 0.5, 0.76923465505284155, 0.95308992296933200])
_GL_W = np.array([0.11846344252809454, 0.23931433524968324, 0.28444444444444444, 0.23931433524968324,
                  0.11846344252809454])


@njit(cache=True)
def _af_branch(xn, nu, c, kappa, dlam):
    """Exact AF backstress after a plastic increment ``dlam`` with fixed sign ``nu``."""
    h = c * kappa * dlam
    e = math.exp(-h)
    phi = 1.0 if h < 1e-12 else -math.expm1(-h) / h
    x = xn * e + c * nu * dlam * phi
    return x, c * (nu - kappa * x)


@njit(cache=True)
def _af_dissipation(xn, nu, c, kappa, dlam):
    """Integral of ``kappa x^2`` over the increment (Gauss-Legendre, non-negative)."""
    acc = 0.0
    for q in range(5):
        x, _ = _af_branch(xn, nu, c, kappa, dlam * _GL_X[q])
        acc += _GL_W[q] * x * x
    return kappa * acc * dlam


@njit(cache=True)
def _ow2_rhs(y, c, rr, m):
    if y <= 0.0:
        return c, 0.0
    q = (y / rr) ** m
    return c * (1.0 - q), y * q


@njit(cache=True)
def _ow2_steps(xn, c, rr, m, dlam):
    """RK4 substeps needed to integrate an OW2 branch over ``dlam``."""
    y = max(abs(xn), rr)
    rate = c * max(m, 1.0) * (y / rr) ** max(m - 1.0, 0.0) / rr
    return min(max(int(math.ceil(rate * dlam / 0.05)), 1), 4000)


@njit(cache=True)
def _ow2_branch(xn, nu, c, rr, m, dlam, nrk):
    """OW2 backstress after ``dlam``, its derivative and the branch dissipation.

    Along the flow direction ``y = nu x`` obeys ``dy/dlam = c (1 - <y/rr>^m)``
    (no recovery while ``y < 0``); the dissipation rate is ``y <y/rr>^m``.
    """
    y = nu * xn
    rest = dlam
    if y < 0.0:
        reach = -y / c
        if reach >= dlam:
            y += c * dlam
            return nu * y, nu * c, 0.0
        y = 0.0
        rest = dlam - reach
    h = rest / nrk
    d = 0.0
    for _ in range(nrk):
        k1, q1 = _ow2_rhs(y, c, rr, m)
        k2, q2 = _ow2_rhs(y + 0.5 * h * k1, c, rr, m)
        k3, q3 = _ow2_rhs(y + 0.5 * h * k2, c, rr, m)
        k4, q4 = _ow2_rhs(y + h * k3, c, rr, m)
        y += h * (k1 + 2.0 * k2 + 2.0 * k3 + k4) / 6.0
        d += h * (q1 + 2.0 * q2 + 2.0 * q3 + q4) / 6.0
    dy, _ = _ow2_rhs(y, c, rr, m)
    return nu * y, nu * dy, d


@njit(cache=True)
def _residual(dlam, nu, sig_dev, xn, c, kappa, rr, fam, m_ow, hk, h1, h2, K, s0, seps0, de_el, eta, m_p, dt, nrk,
              x_out):
    """Consistency residual G(dlam) and dG/ddlam; fills branch backstresses."""
    nb = xn.shape[0]
    s_eff = sig_dev
    ds_eff = 0.0
    for l in range(nb):
        if fam == FAM_AF:
            x, dx = _af_branch(xn[l], nu, c[l], kappa[l], dlam)
        elif fam == FAM_OW1:
            x = xn[l] + c[l] * nu * dlam
            dx = c[l] * nu
            if rr[l] < np.inf and abs(x) > rr[l]:
                x = rr[l] if x > 0 else -rr[l]
                dx = 0.0
        else:
            x, dx, _ = _ow2_branch(xn[l], nu, c[l], rr[l], m_ow, dlam, nrk[l])
        x_out[l] = x
        s_eff -= x
        ds_eff -= dx
    s = s0 + SQ23 * dlam
    arg = nu * dlam + de_el
    seps = seps0 + SQ23 * abs(arg)
    R = _hardening(hk, h1, h2, s, seps)
    dR = SQ23 * _hardening_ds(hk, h1, h2, s)
    if hk == HARD_NEW:
        dR -= h2 * SQ23 * (nu if arg >= 0 else -nu)
    G = nu * s_eff - SQ23 * (K + R)
    dG = nu * ds_eff - SQ23 * dR
    if eta > 0.0 and dlam > 0.0:
        a = (eta / dt) ** (1.0 / m_p)
        G -= a * dlam ** (1.0 / m_p)
        dG -= a / m_p * dlam ** (1.0 / m_p - 1.0)
    return G, dG, K + R, s_eff


@njit(cache=True)
def _set_rk_steps(fam, x, c, rr, m_ow, dlam, nrk):
    if fam == FAM_OW2:
        for l in range(c.shape[0]):
            nrk[l] = _ow2_steps(x[l], c[l], rr[l], m_ow, dlam)


@njit(cache=True)
def _substep(state, x, sig_old, sig_new, dt, c, kappa, rr, fam, m_ow, hk, h1, h2, K, eta, m_p, mu, tol, xtmp, nrk,
             dbr, out):
    """Advance ``state = [e_i, s, s_eps, e_l...]`` in place.

    ``out`` receives ``(dlam, d_eff, status)`` and ``dbr`` the per-branch
    dissipated work (MPa); ``x`` holds branch backstress coordinates and is
    updated together with the state.
    """
    nb = c.shape[0]
    e_i = state[0]
    s0 = state[1]
    seps0 = state[2]
    sig_dev = SQ23 * sig_new
    de_el = (sig_new - sig_old) * INV_SQ6 / mu
    for l in range(nb):
        dbr[l] = 0.0
    s_tr = sig_dev
    for l in range(nb):
        s_tr -= x[l]
    seps_tr = seps0 + SQ23 * abs(de_el)
    radius = K + _hardening(hk, h1, h2, s0, seps_tr)
    if radius <= 0.0:
        out[2] = ERR_RADIUS
        return
    f_tr = abs(s_tr) - SQ23 * radius
    if f_tr <= tol * radius:
        state[2] = seps_tr
        out[0] = 0.0
        out[1] = 0.0
        out[2] = OK
        return
    nu = 1.0 if s_tr > 0 else -1.0
    # bracket the root
    csum = 0.0
    for l in range(nb):
        csum += c[l]
    lo = 0.0
    hi = f_tr / (csum + abs(h1) + 1.0)
    found = False
    for _ in range(200):
        _set_rk_steps(fam, x, c, rr, m_ow, hi, nrk)
        ghi, dghi, rad, se = _residual(hi, nu, sig_dev, x, c, kappa, rr, fam, m_ow, hk, h1, h2, K, s0, seps0, de_el,
                                       eta, m_p, dt, nrk, xtmp)
        if ghi < 0.0:
            found = True
            break
        lo = hi
        hi *= 2.0
        if hi > 10.0:
            break
    if not found:
        out[2] = ERR_CAPACITY
        return
    dlam = 0.5 * (lo + hi)
    conv = False
    for _ in range(200):
        g, dg, rad, se = _residual(dlam, nu, sig_dev, x, c, kappa, rr, fam, m_ow, hk, h1, h2, K, s0, seps0, de_el,
                                   eta, m_p, dt, nrk, xtmp)
        if g > 0.0:
            lo = dlam
        else:
            hi = dlam
        if abs(g) <= 1e-13 * radius or hi - lo <= 4e-16 * hi:
            conv = True
            break
        step = g / dg if dg < 0.0 else 0.0
        cand = dlam - step
        if dg >= 0.0 or not (lo < cand < hi):
            cand = 0.5 * (lo + hi)
        dlam = cand
    if not conv:
        out[2] = ERR_NEWTON
        return
    g, dg, rad, s_eff = _residual(dlam, nu, sig_dev, x, c, kappa, rr, fam, m_ow, hk, h1, h2, K, s0, seps0, de_el,
                                  eta, m_p, dt, nrk, xtmp)
    if rad <= 0.0:
        out[2] = ERR_RADIUS
        return
    for l in range(nb):
        if fam == FAM_AF:
            dbr[l] = _af_dissipation(x[l], nu, c[l], kappa[l], dlam)
        elif fam == FAM_OW1:
            if rr[l] < np.inf:
                hit = (rr[l] - nu * x[l]) / c[l]
                dbr[l] = rr[l] * max(dlam - hit, 0.0)
        else:
            _, _, dbr[l] = _ow2_branch(x[l], nu, c[l], rr[l], m_ow, dlam, nrk[l])
    e_new = e_i + nu * dlam
    for l in range(nb):
        x[l] = xtmp[l]
        state[3 + l] = e_new - x[l] / c[l]
    state[0] = e_new
    state[1] = s0 + SQ23 * dlam
    state[2] = seps0 + SQ23 * abs(nu * dlam + de_el)
    out[0] = dlam
    out[1] = s_eff * nu * dlam
    out[2] = OK


@njit(cache=True)
def integrate_uniaxial(
    fam, hk, h1, h2, K, c, kappa, rr, m_ow, eta, m_p,
    k, mu, alpha, theta0, c0, rho, omega, theta_init, thermal_strain,
    time, sig, tol, max_halvings,
    eps11, eps22, theta, s_out, seps_out, ei_out, eli_out, diss_cum, d_eff, d_br,
):
    """Integrate a discretized stress history.

    ``rr`` are the saturation values of the backstress coordinates: the OW1
    micro-yield radii (``inf`` for unbounded branches) or the OW2 levels
    where the recovery factor reaches one. Per-step dissipation terms ``d_eff`` (effective
    stress times inelastic strain increment) and ``d_br`` (backstress times
    branch strain increment) are in MPa. Returns ``(status, failed_step)``.
    """
    nb = c.shape[0]
    n = time.shape[0]
    state = np.zeros(3 + nb)
    trial = np.zeros(3 + nb)
    x = np.zeros(nb)
    xs = np.zeros(nb)
    xtmp = np.zeros(nb)
    out = np.zeros(3)
    nrk = np.ones(nb, dtype=np.int64)
    dbr_sub = np.zeros(nb)
    dbr_acc = np.zeros(nb)
    th = theta_init
    comp = 1.0 / (9.0 * k)
    inv3mu = 1.0 / (3.0 * mu)
    for i in range(n):
        if i > 0:
            dt_full = time[i] - time[i - 1]
            ok = False
            nsub = 1
            for _h in range(max_halvings + 1):
                for j in range(3 + nb):
                    trial[j] = state[j]
                for l in range(nb):
                    xs[l] = x[l]
                for l in range(nb):
                    dbr_acc[l] = 0.0
                deff = 0.0
                status = OK
                for q in range(nsub):
                    s_a = sig[i - 1] + (sig[i] - sig[i - 1]) * q / nsub
                    s_b = sig[i - 1] + (sig[i] - sig[i - 1]) * (q + 1) / nsub
                    _substep(trial, xs, s_a, s_b, dt_full / nsub, c, kappa, rr, fam, m_ow, hk, h1, h2, K, eta, m_p,
                             mu, tol, xtmp, nrk, dbr_sub, out)
                    status = int(out[2])
                    if status != OK:
                        break
                    deff += out[1]
                    for l in range(nb):
                        dbr_acc[l] += dbr_sub[l]
                if status == OK:
                    ok = True
                    break
                nsub *= 2
            if not ok:
                return status, i
            for j in range(3 + nb):
                state[j] = trial[j]
            for l in range(nb):
                x[l] = xs[l]
            dmech = deff
            d_eff[i] = deff
            for l in range(nb):
                d_br[i, l] = dbr_acc[l]
                dmech += dbr_acc[l]
            diss_cum[i] = diss_cum[i - 1] + dmech * MPA / rho
            # heat equation with the thermal expansion rate moved to the left:
            # (c0) dtheta/dt = -(alpha theta / 3 rho) dsigma/dt + delta - omega (theta - theta0)
            if dt_full > 0.0:
                a = alpha * (sig[i] - sig[i - 1]) / dt_full * MPA / (3.0 * rho)
                lam = (a + omega) / c0
                rhs = (-a * th + dmech * MPA / rho / dt_full - omega * (th - theta0)) / c0
                z = lam * dt_full
                phi = 1.0 if abs(z) < 1e-12 else -math.expm1(-z) / z
                th = th + rhs * phi * dt_full
            if not th > 0.0:
                return ERR_THERMAL, i
        ei = state[0]
        ts = alpha * (th - theta0) / 3.0 if thermal_strain else 0.0
        eps11[i] = sig[i] * comp + sig[i] * inv3mu + SQ23 * ei + ts
        eps22[i] = sig[i] * comp - 0.5 * sig[i] * inv3mu - INV_SQ6 * ei + ts
        theta[i] = th
        s_out[i] = state[1]
        seps_out[i] = state[2]
        ei_out[i] = ei
        for l in range(nb):
            eli_out[i, l] = state[3 + l]
    return OK, -1
