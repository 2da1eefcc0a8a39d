"""Nelder-Mead simplex minimization, vectorized over independent problems.

Each of ``G`` problems carries its own simplex; one iteration advances every
unconverged problem by one Nelder-Mead step. The objective is called as
``fun(points, rows)`` with ``points`` of shape ``(n, p)`` and ``rows`` the
problem index of each point, and must return ``n`` values. Every problem
follows exactly the sequence of steps the scalar algorithm would take, so its
result does not depend on which other problems share the batch as long as the
objective evaluates rows independently.
"""

from dataclasses import dataclass

import numpy as np

RHO, CHI, PSI, SIGMA = 1.0, 2.0, 0.5, 0.5


@dataclass
class SimplexResult:
    x: np.ndarray
    fun: np.ndarray
    nit: np.ndarray
    converged: np.ndarray


def initial_simplex(x0, rel_step=0.1, abs_step=0.1):
    """Axis-aligned simplex: vertex ``j`` perturbs coordinate ``j - 1``.

    Nonzero coordinates move by ``rel_step * x``, zero coordinates by ``abs_step``.
    """
    x0 = np.atleast_2d(np.asarray(x0, dtype=float))
    g, p = x0.shape
    sim = np.repeat(x0[:, None, :], p + 1, axis=1)
    step = np.where(x0 != 0, rel_step * x0, abs_step)
    j = np.arange(p)
    sim[:, j + 1, j] += step
    return sim


def _sort(sim, fsim):
    order = np.argsort(fsim, axis=1, kind="stable")
    return np.take_along_axis(sim, order[..., None], axis=1), np.take_along_axis(fsim, order, axis=1)


def _nonfinite_to_inf(f):
    f = np.asarray(f, dtype=float)
    return np.where(np.isnan(f), np.inf, f)


def nelder_mead(fun, x0, max_iter=500, fatol=1e-6, rel_step=0.1, abs_step=0.1, sim=None):
    """Minimize ``G`` problems from starting points ``x0`` of shape ``(G, p)``.

    A problem converges when the spread of objective values over its simplex
    falls below ``fatol``; otherwise it stops after ``max_iter`` iterations.
    NaN objective values are treated as ``+inf``.
    """
    if sim is None:
        sim = initial_simplex(x0, rel_step, abs_step)
    sim = np.array(sim, dtype=float)
    g, n_vert, p = sim.shape
    all_rows = np.repeat(np.arange(g), n_vert)
    fsim = _nonfinite_to_inf(fun(sim.reshape(-1, p), all_rows)).reshape(g, n_vert)
    nit = np.zeros(g, dtype=int)
    converged = np.zeros(g, dtype=bool)
    active = np.ones(g, dtype=bool)

    while True:
        sim, fsim = _sort(sim, fsim)
        with np.errstate(invalid="ignore"):
            spread = fsim[:, -1] - fsim[:, 0]
        done = np.isfinite(spread) & (spread < fatol)
        converged |= active & done
        active &= ~done & (nit < max_iter)
        rows = np.flatnonzero(active)
        if rows.size == 0:
            break
        nit[rows] += 1

        s, f = sim[rows], fsim[rows]
        xbar = s[:, :-1].mean(axis=1)
        worst, f_worst = s[:, -1], f[:, -1]
        f_best, f_second = f[:, 0], f[:, -2]

        xr = (1 + RHO) * xbar - RHO * worst
        fr = _nonfinite_to_inf(fun(xr, rows))
        new_x = xr.copy()
        new_f = fr.copy()
        shrink = np.zeros(rows.size, dtype=bool)

        expand = fr < f_best
        if expand.any():
            k = np.flatnonzero(expand)
            xe = (1 + RHO * CHI) * xbar[k] - RHO * CHI * worst[k]
            fe = _nonfinite_to_inf(fun(xe, rows[k]))
            better = fe < fr[k]
            new_x[k[better]] = xe[better]
            new_f[k[better]] = fe[better]

        contract = ~expand & ~(fr < f_second)
        outside = contract & (fr < f_worst)
        inside = contract & ~outside
        if outside.any():
            k = np.flatnonzero(outside)
            xc = (1 + PSI * RHO) * xbar[k] - PSI * RHO * worst[k]
            fc = _nonfinite_to_inf(fun(xc, rows[k]))
            ok = fc <= fr[k]
            new_x[k[ok]] = xc[ok]
            new_f[k[ok]] = fc[ok]
            shrink[k[~ok]] = True
        if inside.any():
            k = np.flatnonzero(inside)
            xcc = (1 - PSI) * xbar[k] + PSI * worst[k]
            fcc = _nonfinite_to_inf(fun(xcc, rows[k]))
            ok = fcc < f_worst[k]
            new_x[k[ok]] = xcc[ok]
            new_f[k[ok]] = fcc[ok]
            shrink[k[~ok]] = True

        keep = ~shrink
        s[keep, -1] = new_x[keep]
        f[keep, -1] = new_f[keep]
        if shrink.any():
            k = np.flatnonzero(shrink)
            best = s[k, :1]
            s[k, 1:] = best + SIGMA * (s[k, 1:] - best)
            pts = s[k, 1:].reshape(-1, p)
            fs = _nonfinite_to_inf(fun(pts, np.repeat(rows[k], n_vert - 1)))
            f[k, 1:] = fs.reshape(k.size, n_vert - 1)
        sim[rows] = s
        fsim[rows] = f

    return SimplexResult(x=sim[:, 0].copy(), fun=fsim[:, 0].copy(), nit=nit, converged=converged)


def minimize(fun, x0, max_iter=500, fatol=1e-6, restart=True, rel_step=0.1, abs_step=0.1):
    """Nelder-Mead with one restart from the best vertex on a re-inflated simplex.

    Returns the better of the two runs per problem; ``nit`` sums both runs and
    ``converged`` reports the final run.
    """
    x0 = np.atleast_2d(np.asarray(x0, dtype=float))
    first = nelder_mead(fun, x0, max_iter, fatol, rel_step, abs_step)
    if not restart:
        return first
    second = nelder_mead(fun, first.x, max_iter, fatol, rel_step, abs_step)
    take = second.fun <= first.fun
    return SimplexResult(
        x=np.where(take[:, None], second.x, first.x),
        fun=np.where(take, second.fun, first.fun),
        nit=first.nit + second.nit,
        converged=second.converged,
    )
