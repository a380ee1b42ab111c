"""Compiled inner loops.

Every scalar helper here is also called from the pure-Python step functions,
so the path kernels and the per-step API share one arithmetic.
"""

from __future__ import annotations

import math

import numpy as np
from numba import njit

# kind codes for explicit kernels
IDENTITY, TAMED, PROJECTED, PLAIN_EM = 0, 1, 2, 3

# status codes
OK, NO_CONVERGENCE, BRACKET_FAILURE, NON_FINITE, NON_POSITIVE = 0, 1, 2, 3, 4

BEM_LO, BEM_HI = 1e-30, 1e30
BEM_MAXIT = 200
_EPS = np.finfo(np.float64).eps


@njit(cache=True, nogil=True)
def corrected_coeffs(y, kind, sqrt_h, thr, a2, sigma, r, rho):
    """Return ``(f_h(y), g_h(y))`` for y > 0."""
    if kind == TAMED:
        yr = y**r
        if math.isinf(yr):
            return -a2 / sqrt_h, sigma * y ** (rho - r) / sqrt_h
        den = 1.0 + sqrt_h * yr
        return (-a2 * yr) / den, (sigma * y**rho) / den
    if kind == PROJECTED:
        z = y if abs(y) <= thr else math.copysign(thr, y)
        return -a2 * z**r, sigma * z**rho
    return -a2 * y**r, sigma * y**rho


@njit(cache=True, nogil=True)
def positive_root(b, ah):
    """Positive root of ``Y**2 - b Y - ah = 0`` (ah > 0), cancellation free."""
    s = math.hypot(b, 2.0 * math.sqrt(ah))
    if b >= 0.0:
        return 0.5 * (b + s)
    return (2.0 * ah) / (s - b)


@njit(cache=True, nogil=True)
def quadratic_residual(y, b, ah):
    """``|Y^2 - bY - ah| / max(Y^2, |b|Y, ah)``, evaluated after dividing by Y."""
    q = ah / y
    m = max(y, abs(b), q)
    return abs(y - b - q) / m


@njit(cache=True, nogil=True)
def explicit_b(y, h, dW, dN, a0, a1, fh, gh, jump):
    theta = -a0 + a1 * y + fh
    s = gh * dW + jump * dN
    return y + theta * h + s


@njit(cache=True, nogil=True)
def _bem_residual(y, k1, k2, k3, r, cst):
    return y * k1 - k2 / y + k3 * y**r - cst


@njit(cache=True, nogil=True)
def bem_solve(cst, yn, h, am1, a1, a2, r, tol):
    """Solve ``y (1 - a1 h) - am1 h / y + a2 h y^r = cst`` for y > 0.

    Newton from ``yn`` inside a bracket that shrinks with every evaluation;
    bisection (geometric while the bracket spans more than a factor 4) takes
    over when Newton leaves the bracket or fails to reduce ``|G|``.
    Returns ``(y, |G(y)|, status, iterations)``.
    """
    k1 = 1.0 - a1 * h
    k2 = am1 * h
    k3 = a2 * h
    lo, hi = BEM_LO, BEM_HI
    lo_ok = False
    hi_ok = False

    y = yn
    if not (lo < y < hi):
        y = math.sqrt(lo * hi) if not math.isfinite(y) else min(max(y, 2 * lo), 0.5 * hi)
    G = _bem_residual(y, k1, k2, k3, r, cst)
    if not math.isfinite(G):
        return y, G, NON_FINITE, 0
    if abs(G) <= tol:
        return y, abs(G), OK, 0
    if G < 0.0:
        lo, lo_ok = y, True
    else:
        hi, hi_ok = y, True

    force_bisect = False
    for it in range(1, BEM_MAXIT + 1):
        newton_ok = False
        if not force_bisect:
            yr = y**r
            dG = k1 + k2 / (y * y) + k3 * r * yr / y
            if dG > 0.0 and math.isfinite(dG):
                y_new = y - G / dG
                newton_ok = lo < y_new < hi
        if not newton_ok:
            if not lo_ok:
                g_lo = _bem_residual(lo, k1, k2, k3, r, cst)
                if g_lo == 0.0:
                    return lo, 0.0, OK, it
                if not g_lo < 0.0:
                    return y, abs(G), BRACKET_FAILURE, it
                lo_ok = True
            if not hi_ok:
                g_hi = _bem_residual(hi, k1, k2, k3, r, cst)
                if g_hi == 0.0:
                    return hi, 0.0, OK, it
                if not g_hi > 0.0:
                    return y, abs(G), BRACKET_FAILURE, it
                hi_ok = True
            if hi > 4.0 * lo:
                y_new = math.sqrt(lo) * math.sqrt(hi)
            else:
                y_new = 0.5 * (lo + hi)
        G_new = _bem_residual(y_new, k1, k2, k3, r, cst)
        if not math.isfinite(G_new):
            return y_new, G_new, NON_FINITE, it
        force_bisect = newton_ok and abs(G_new) >= abs(G)
        y, G = y_new, G_new
        if abs(G) <= tol:
            return y, abs(G), OK, it
        if G < 0.0:
            lo, lo_ok = y, True
        else:
            hi, hi_ok = y, True
        if lo_ok and hi_ok and hi - lo <= 4.0 * _EPS * hi:
            # bracket at machine resolution; |G| is at its rounding floor
            return y, abs(G), OK, it
    return y, abs(G), NO_CONVERGENCE, BEM_MAXIT


@njit(cache=True, nogil=True)
def explicit_path(x0, h, dW, dN, am1, a0, a1, a2, sigma, r, rho, jump_scale, kind, thr):
    """Iterate the semi-implicit scheme (or plain EM for ``kind == PLAIN_EM``).

    Returns ``(values, max_residual, status, failed_step)``; on failure the
    values after ``failed_step`` are left at zero.
    """
    n = dW.shape[0]
    out = np.zeros(n + 1)
    out[0] = x0
    y = x0
    ah = am1 * h
    sqrt_h = math.sqrt(h)
    maxres = 0.0
    for i in range(n):
        if kind == PLAIN_EM:
            y_new = y + (am1 / y - a0 + a1 * y - a2 * y**r) * h + sigma * y**rho * dW[i] + jump_scale * y * dN[i]
            if not math.isfinite(y_new):
                out[i + 1] = y_new
                return out, maxres, NON_FINITE, i
            out[i + 1] = y_new
            if y_new <= 0.0:
                return out, maxres, NON_POSITIVE, i
            y = y_new
            continue
        fh, gh = corrected_coeffs(y, kind, sqrt_h, thr, a2, sigma, r, rho)
        b = explicit_b(y, h, dW[i], dN[i], a0, a1, fh, gh, jump_scale * y)
        y_new = positive_root(b, ah)
        if not (math.isfinite(y_new) and y_new > 0.0):
            out[i + 1] = y_new
            return out, maxres, NON_FINITE, i
        res = quadratic_residual(y_new, b, ah)
        if res > maxres:
            maxres = res
        out[i + 1] = y_new
        y = y_new
    return out, maxres, OK, -1


@njit(cache=True, nogil=True)
def bem_path(x0, h, dW, dN, am1, a0, a1, a2, sigma, r, rho, jump_scale):
    """Drift-implicit Euler path. Returns ``(values, max|G|, status, failed_step)``."""
    n = dW.shape[0]
    out = np.zeros(n + 1)
    out[0] = x0
    y = x0
    maxg = 0.0
    for i in range(n):
        cst = y + (-a0) * h + sigma * y**rho * dW[i] + jump_scale * y * dN[i]
        tol = 1e-12 * (1.0 + abs(y))
        y_new, gabs, status, _ = bem_solve(cst, y, h, am1, a1, a2, r, tol)
        if status != OK:
            return out, maxg, status, i
        if gabs > maxg:
            maxg = gabs
        out[i + 1] = y_new
        y = y_new
    return out, maxg, OK, -1


@njit(cache=True, nogil=True)
def explicit_step_batch(y, h, dW, dN, am1, a0, a1, a2, sigma, r, rho, jump_scale, kind, kappa):
    """Elementwise explicit steps for arrays of inputs; returns ``(next, residual)``."""
    n = y.shape[0]
    out = np.empty(n)
    res = np.empty(n)
    for i in range(n):
        hi = h[i]
        thr = hi ** (-kappa) if kind == PROJECTED else np.inf
        fh, gh = corrected_coeffs(y[i], kind, math.sqrt(hi), thr, a2, sigma, r, rho)
        b = explicit_b(y[i], hi, dW[i], dN[i], a0, a1, fh, gh, jump_scale * y[i])
        ah = am1 * hi
        out[i] = positive_root(b, ah)
        res[i] = quadratic_residual(out[i], b, ah)
    return out, res
