"""Compiled inner loops for parameter estimation.

The standard normal tail is written as ``Phi(-x) = exp(-x**2 / 2) * R(x)`` for
``x >= 0``, with ``R`` from Hart's double-precision rational approximation
(continued fraction beyond ``x = 5 sqrt(2)``). Keeping the exponential factor
separate lets every CDF ratio in the truncated-normal CRPS be formed without
underflow, and lets the density reuse the same exponential.

Hart's approximation is accurate to double precision in absolute terms only;
its relative error grows to about 3e-9 near ``x = 7``. Where tail values enter
ratios (locations far below zero), :func:`tail_factor_rel` switches to the
Mills-ratio continued fraction, accurate to a few ulp relative for ``x >= 3``.
"""

import math

import numba
import numpy as np

_SQRT_2PI = math.sqrt(2.0 * math.pi)
_INV_SQRT_2PI = 1.0 / _SQRT_2PI
_INV_SQRT_PI = 1.0 / math.sqrt(math.pi)
_SQRT2 = math.sqrt(2.0)
_SPLIT = 7.07106781186547
_CF_START = 3.0
_CF_TERMS = 40
# beyond this standardized location Phi(-alpha) < 2**-54
_NO_TRUNCATION = 8.3


@numba.njit(cache=True, nogil=True, error_model="numpy")
def tail_factor(x):
    """``R(x) = Phi(-x) * exp(x**2 / 2)`` for ``x >= 0``."""
    if x < _SPLIT:
        num = 3.52624965998911e-02 * x + 0.700383064443688
        num = num * x + 6.37396220353165
        num = num * x + 33.912866078383
        num = num * x + 112.079291497871
        num = num * x + 221.213596169931
        num = num * x + 220.206867912376
        den = 8.83883476483184e-02 * x + 1.75566716318264
        den = den * x + 16.064177579207
        den = den * x + 86.7807322029461
        den = den * x + 296.564248779674
        den = den * x + 637.333633378831
        den = den * x + 793.826512519948
        den = den * x + 440.413735824752
        return num / den
    cf = x + 0.65
    cf = x + 4.0 / cf
    cf = x + 3.0 / cf
    cf = x + 2.0 / cf
    cf = x + 1.0 / cf
    return 1.0 / (cf * _SQRT_2PI)


@numba.njit(cache=True, nogil=True, error_model="numpy")
def tail_factor_rel(x):
    """``R(x)`` to near machine precision relative error."""
    if x < _CF_START:
        return tail_factor(x)
    t = x
    for k in range(_CF_TERMS, 0, -1):
        t = x + k / t
    return 1.0 / (t * _SQRT_2PI)


@numba.njit(cache=True)
def norm_cdf(x):
    """Standard normal CDF."""
    ax = abs(x)
    lower = math.exp(-0.5 * ax * ax) * tail_factor(ax)
    return 1.0 - lower if x > 0 else lower


@numba.vectorize(["float64(float64)"], cache=True)
def norm_cdf_ufunc(x):
    return norm_cdf(x)


@numba.njit(cache=True, nogil=True, error_model="numpy")
def crps_tn_scalar(mu, sigma, y):
    """Closed-form CRPS of the zero-truncated normal (``y >= 0``, ``sigma > 0``)."""
    inv_sigma = 1.0 / sigma
    z = (y - mu) * inv_sigma
    alpha = mu * inv_sigma
    ez = math.exp(-0.5 * z * z)
    if alpha >= 0.0:
        if z >= 0.0:
            upper = ez * tail_factor(z)
        else:
            upper = 1.0 - ez * tail_factor(-z)
        if alpha > _NO_TRUNCATION:
            # Phi(alpha) and Phi(sqrt(2) alpha) round to one
            return sigma * (z * (1.0 - 2.0 * upper) + 2.0 * _INV_SQRT_2PI * ez - _INV_SQRT_PI)
        ea = math.exp(-0.5 * alpha * alpha)
        inv_mass = 1.0 / (1.0 - ea * tail_factor(alpha))
        pair = 1.0 - ea * ea * tail_factor(_SQRT2 * alpha)
        r_tail = upper * inv_mass
        r_dens = _INV_SQRT_2PI * ez * inv_mass
        r_pair = pair * inv_mass * inv_mass
    else:
        # y >= 0 implies z >= -alpha > 0; exponentials are divided out analytically
        inv_ra = 1.0 / tail_factor_rel(-alpha)
        shift = math.exp(-0.5 * (z - alpha) * (z + alpha))
        r_tail = shift * tail_factor_rel(z) * inv_ra
        r_dens = shift * _INV_SQRT_2PI * inv_ra
        r_pair = tail_factor_rel(-_SQRT2 * alpha) * inv_ra * inv_ra
    return sigma * (z * (1.0 - 2.0 * r_tail) + 2.0 * r_dens - _INV_SQRT_PI * r_pair)


@numba.vectorize(["float64(float64, float64, float64)"], cache=True)
def crps_tn_ufunc(mu, sigma, y):
    return crps_tn_scalar(mu, sigma, y)


@numba.njit(cache=True, nogil=True, error_model="numpy")
def row_mean_crps(theta, g, mean_high, mean_low, s2, y, count):
    """Mean CRPS of coefficients ``theta = (a, b_high, b_low, c, d)`` on training row ``g``.

    Returns ``inf`` for an empty row, a non-positive variance or a non-finite sum.
    """
    a = theta[0]
    bh2 = theta[1] * theta[1]
    bl2 = theta[2] * theta[2]
    c2 = theta[3] * theta[3]
    d2 = theta[4] * theta[4]
    n = count[g]
    if n <= 0:
        return np.inf
    total = 0.0
    for j in range(n):
        var = c2 + d2 * s2[g, j]
        if not var > 0.0:
            return np.inf
        mu = a + bh2 * mean_high[g, j] + bl2 * mean_low[g, j]
        total += crps_tn_scalar(mu, math.sqrt(var), y[g, j])
    if not math.isfinite(total):
        return np.inf
    return total / n


@numba.njit(cache=True, nogil=True, error_model="numpy")
def batch_mean_crps(theta, rows, mean_high, mean_low, s2, y, count, out):
    """Mean CRPS of the EMOS link for each parameter row.

    ``theta[i]`` holds ``(a, b_high, b_low, c, d)`` evaluated on training set
    ``rows[i]``, whose first ``count[row]`` entries are valid. Sums run in case
    order, so a result depends only on its own training set.
    """
    for i in range(theta.shape[0]):
        out[i] = row_mean_crps(theta[i], rows[i], mean_high, mean_low, s2, y, count)


# Nelder-Mead coefficients; identical to windemos.optimize
_RHO, _CHI, _PSI, _SIGMA = 1.0, 2.0, 0.5, 0.5


@numba.njit(cache=True, nogil=True, error_model="numpy")
def _eval(x, active, full, g, mean_high, mean_low, s2, y, count):
    for k in range(active.size):
        full[active[k]] = x[k]
    f = row_mean_crps(full, g, mean_high, mean_low, s2, y, count)
    return np.inf if math.isnan(f) else f


@numba.njit(cache=True, nogil=True, error_model="numpy")
def _simplex(x0, active, g, mean_high, mean_low, s2, y, count, max_iter, fatol, rel_step, abs_step, x_out):
    """One Nelder-Mead run on row ``g``; the step sequence of ``optimize.nelder_mead``."""
    p = x0.size
    full = np.zeros(5)
    sim = np.empty((p + 1, p))
    fsim = np.empty(p + 1)
    for i in range(p + 1):
        sim[i] = x0
    for j in range(p):
        sim[j + 1, j] += rel_step * x0[j] if x0[j] != 0 else abs_step
    for i in range(p + 1):
        fsim[i] = _eval(sim[i], active, full, g, mean_high, mean_low, s2, y, count)
    xbar = np.empty(p)
    xr = np.empty(p)
    xt = np.empty(p)
    nit = 0
    converged = False
    while True:
        order = np.argsort(fsim, kind="mergesort")
        sim = sim[order]
        fsim = fsim[order]
        spread = fsim[p] - fsim[0]
        if math.isfinite(spread) and spread < fatol:
            converged = True
            break
        if nit >= max_iter:
            break
        nit += 1
        for k in range(p):
            acc = sim[0, k]
            for i in range(1, p):
                acc += sim[i, k]
            xbar[k] = acc / p
        for k in range(p):
            xr[k] = (1 + _RHO) * xbar[k] - _RHO * sim[p, k]
        fr = _eval(xr, active, full, g, mean_high, mean_low, s2, y, count)
        shrink = False
        if fr < fsim[0]:
            for k in range(p):
                xt[k] = (1 + _RHO * _CHI) * xbar[k] - _RHO * _CHI * sim[p, k]
            fe = _eval(xt, active, full, g, mean_high, mean_low, s2, y, count)
            if fe < fr:
                sim[p] = xt
                fsim[p] = fe
            else:
                sim[p] = xr
                fsim[p] = fr
        elif fr < fsim[p - 1]:
            sim[p] = xr
            fsim[p] = fr
        elif fr < fsim[p]:
            for k in range(p):
                xt[k] = (1 + _PSI * _RHO) * xbar[k] - _PSI * _RHO * sim[p, k]
            fc = _eval(xt, active, full, g, mean_high, mean_low, s2, y, count)
            if fc <= fr:
                sim[p] = xt
                fsim[p] = fc
            else:
                shrink = True
        else:
            for k in range(p):
                xt[k] = (1 - _PSI) * xbar[k] + _PSI * sim[p, k]
            fcc = _eval(xt, active, full, g, mean_high, mean_low, s2, y, count)
            if fcc < fsim[p]:
                sim[p] = xt
                fsim[p] = fcc
            else:
                shrink = True
        if shrink:
            for i in range(1, p + 1):
                for k in range(p):
                    sim[i, k] = sim[0, k] + _SIGMA * (sim[i, k] - sim[0, k])
                fsim[i] = _eval(sim[i], active, full, g, mean_high, mean_low, s2, y, count)
    x_out[:] = sim[0]
    return fsim[0], nit, converged


@numba.njit(cache=True, nogil=True, error_model="numpy")
def fit_rows(x0, active, mean_high, mean_low, s2, y, count, max_iter, fatol, restart,
             rel_step, abs_step, x_out, f_out, nit_out, conv_out):
    """Nelder-Mead with an optional restart for every training row.

    Mirrors ``optimize.minimize``: the better of the two runs is kept,
    iterations are summed and convergence refers to the final run.
    """
    p = x0.shape[1]
    x1 = np.empty(p)
    x2 = np.empty(p)
    for g in range(x0.shape[0]):
        f1, n1, c1 = _simplex(x0[g], active, g, mean_high, mean_low, s2, y, count,
                              max_iter, fatol, rel_step, abs_step, x1)
        if not restart:
            x_out[g] = x1
            f_out[g], nit_out[g], conv_out[g] = f1, n1, c1
            continue
        f2, n2, c2 = _simplex(x1.copy(), active, g, mean_high, mean_low, s2, y, count,
                              max_iter, fatol, rel_step, abs_step, x2)
        if f2 <= f1:
            x_out[g] = x2
            f_out[g] = f2
        else:
            x_out[g] = x1
            f_out[g] = f1
        nit_out[g] = n1 + n2
        conv_out[g] = c2
