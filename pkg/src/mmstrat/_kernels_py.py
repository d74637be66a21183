"""Pure numpy implementations of the hot kernels (fallback for the compiled core)."""

from __future__ import annotations

import numpy as np
from scipy.linalg import solve_banded


def pde_march(v_T, dx, dt, nsteps, seg_of_step, a, lam, eta, gamma, mu, diff, save_steps):
    """Backward linearly-implicit Euler for v_t + mu v_x + diff v_xx + f(x, v) = 0.

    ``f = -(a + lam/(v + eta)) v^2 + gamma`` is linearised about the previous
    slice (one Newton correction).  Coefficient arrays are (n_seg, J); step
    ``n`` (counted backwards from T, 0-based) uses segment ``seg_of_step[n]``.
    Neumann zero-gradient boundaries by ghost nodes.  Returns the slice at t=0
    and the slices whose backward step count is listed in ``save_steps``.
    """
    v = np.array(v_T, dtype=float)
    J = v.size
    saved = {}
    save = set(int(s) for s in save_steps)
    if 0 in save:
        saved[0] = v.copy()
    inv_dx2 = 1.0 / (dx * dx)
    inv_2dx = 0.5 / dx
    ab = np.empty((3, J))
    for n in range(nsteps):
        s = seg_of_step[n]
        A, L, E, G, MU, D = a[s], lam[s], eta[s], gamma[s], mu[s], diff[s]
        den = v + E
        if den.min() <= 0.0:
            raise FloatingPointError(f"v + eta <= 0 at backward step {n}")
        B = L / den
        f = -(A + B) * v * v + G
        fv = -2.0 * (A + B) * v + L * v * v / (den * den)
        lo = -(D * inv_dx2 - MU * inv_2dx)
        up = -(D * inv_dx2 + MU * inv_2dx)
        diag = 1.0 / dt + 2.0 * D * inv_dx2 - fv
        up0 = -2.0 * D[0] * inv_dx2
        loJ = -2.0 * D[-1] * inv_dx2
        ab[0, 1:] = up[:-1]
        ab[0, 1] = up0
        ab[1] = diag
        ab[2, :-1] = lo[1:]
        ab[2, -2] = loJ
        rhs = v / dt + f - fv * v
        v = solve_banded((1, 1), ab, rhs, overwrite_ab=False, overwrite_b=True, check_finite=False)
        if n + 1 in save:
            saved[n + 1] = v.copy()
    return v, saved


def _apply_map(y, X, acc, mp, rows):
    """Accumulate ``c0 + c1.y + y'c2 y`` and return the new position for ``rows``."""
    g0, g1, c0, c1, c2 = mp
    yr = y[rows]
    acc[rows] += c0 + np.einsum("bqm,bm->bq", c1, yr) + np.einsum("bm,bqml,bl->bq", yr, c2, yr)
    X[rows] = g0 + np.einsum("bim,bm->bi", g1, yr)


def sim_chunk(tab, ev_ptr, ev_cell, ev_theta, ev_kind, ev_sec, ev_mark, x0, S_nodes, diag_nodes, guard):
    """Simulate a chunk of paths; see :mod:`mmstrat.simulate.engine` for the outputs."""
    from .simulate.maps import jump_coeffs, partial_map

    lay = tab.layout
    n, m = lay.n, lay.m
    N = tab.N
    P = ev_ptr.size - 1
    Q = tab.q0.shape[2]
    X = np.broadcast_to(np.asarray(x0, dtype=float), (P, n)).copy()
    y = np.zeros((P, m))
    acc = np.zeros((P, Q))
    spread = np.zeros(P)
    darkraw = np.zeros(P)
    sprev = np.zeros(P)
    sumz = np.zeros((P, n))
    ncust = np.zeros((P, n))
    nfill = np.zeros((P, n))
    sumdelta = np.zeros((P, n))
    nd = len(diag_nodes)
    Xd = np.zeros((P, nd, n))
    Jd = np.zeros((P, nd))
    diag_pos = {int(k): j for j, k in enumerate(diag_nodes)}
    aborted = np.zeros(P, dtype=bool)
    nJ = 6
    if 0 in diag_pos:
        Xd[:, diag_pos[0]] = X

    owner = np.repeat(np.arange(P), np.diff(ev_ptr))
    order = np.lexsort((ev_theta, owner, ev_cell))
    cells_sorted = ev_cell[order]
    bounds = np.searchsorted(cells_sorted, np.arange(N + 1))
    g0f, g1f, c0f, c1f, c2f = tab.full
    all_rows = np.arange(P)
    for k in range(N):
        y[:, :n] = X
        if lay.stochastic:
            y[:, n:2 * n] = S_nodes[:, k]
            y[:, 2 * n:] = S_nodes[:, k + 1]
        idx = order[bounds[k]:bounds[k + 1]]
        if idx.size == 0:
            quiet = all_rows
        else:
            p_ev = owner[idx]
            busy = np.unique(p_ev)
            quiet = np.setdiff1d(all_rows, busy, assume_unique=True)
        if quiet.size:
            mp = (g0f[k], g1f[k], c0f[k], c1f[k], c2f[k])
            mp = tuple(np.broadcast_to(a, (quiet.size,) + a.shape) for a in mp)
            _apply_map(y, X, acc, mp, quiet)
        if idx.size:
            # rank of each event within its path for this cell
            first = np.r_[True, p_ev[1:] != p_ev[:-1]]
            start = np.maximum.accumulate(np.where(first, np.arange(idx.size), 0))
            rank = np.arange(idx.size) - start
            prev = np.zeros(P)
            for r in range(int(rank.max()) + 1):
                sel = idx[rank == r]
                rows = owner[sel]
                th = ev_theta[sel]
                kk = np.full(rows.size, k)
                mp = partial_map(tab, kk, prev[rows], th)
                _apply_map(y, X, acc, mp, rows)
                y[rows, :n] = X[rows]
                j0, j1 = jump_coeffs(tab, kk, th)
                vals = j0 + np.einsum("brim,bm->bri", j1, y[rows])
                sec = ev_sec[sel]
                b = np.arange(rows.size)
                cust = ev_kind[sel] == 0
                z = ev_mark[sel]
                st = vals[b, 0, sec]
                spread_inc = st * (1.0 - np.sign(z) * tab.b[k, sec]) * z
                dlt = vals[b, 2, sec]
                dark_inc = vals[b, 1, sec] * dlt + tab.eta_tilde[k, sec] * dlt * dlt
                jump = np.where(cust, z, dlt)
                spread[rows] += np.where(cust, spread_inc, 0.0)
                sprev[rows] += np.where(cust, st * tab.b[k, sec] * np.abs(z), 0.0)
                darkraw[rows] += np.where(cust, 0.0, dark_inc)
                np.add.at(sumz, (rows[cust], sec[cust]), z[cust])
                np.add.at(ncust, (rows[cust], sec[cust]), 1.0)
                np.add.at(nfill, (rows[~cust], sec[~cust]), 1.0)
                np.add.at(sumdelta, (rows[~cust], sec[~cust]), dlt[~cust])
                X[rows, sec] += jump
                y[rows, :n] = X[rows]
                prev[rows] = th
            mp = partial_map(tab, np.full(busy.size, k), prev[busy], np.ones(busy.size))
            _apply_map(y, X, acc, mp, busy)
        bad = np.any(np.abs(X) > guard, axis=1) | ~np.all(np.isfinite(X), axis=1)
        aborted |= bad
        if aborted.any():
            X[aborted] = 0.0
        if k + 1 in diag_pos:
            j = diag_pos[k + 1]
            Xd[:, j] = X
            Jd[:, j] = acc[:, :nJ].sum(axis=1)
    term_J = np.einsum("pi,ij,pj->p", X, tab.xi, X)
    term_raw = np.einsum("pi,ij,pj->p", X, tab.xi_tilde, X)
    return {"acc": acc, "term_J": term_J, "term_raw": term_raw, "spread": spread, "spread_revenue": sprev,
            "darkraw": darkraw,
            "X_T": X, "sumz": sumz, "ncust": ncust, "nfill": nfill, "sumdelta": sumdelta,
            "Xd": Xd, "Jd": Jd, "aborted": aborted}
