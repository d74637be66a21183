# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled hot kernels; the numpy fallback in ``_kernels_py`` mirrors every entry point."""

import numpy as np
cimport numpy as cnp

cnp.import_array()


def pde_march(v_T, double dx, double dt, Py_ssize_t nsteps, seg_of_step, a, lam, eta, gamma, mu,
              diff, save_steps):
    cdef double[::1] v = np.array(v_T, dtype=np.float64)
    cdef Py_ssize_t J = v.shape[0]
    cdef const long[::1] seg = np.ascontiguousarray(seg_of_step, dtype=np.int64)
    cdef const double[:, ::1] A = np.ascontiguousarray(a, dtype=np.float64)
    cdef const double[:, ::1] L = np.ascontiguousarray(lam, dtype=np.float64)
    cdef const double[:, ::1] E = np.ascontiguousarray(eta, dtype=np.float64)
    cdef const double[:, ::1] G = np.ascontiguousarray(gamma, dtype=np.float64)
    cdef const double[:, ::1] MU = np.ascontiguousarray(mu, dtype=np.float64)
    cdef const double[:, ::1] D = np.ascontiguousarray(diff, dtype=np.float64)
    cdef double[::1] lo = np.empty(J)
    cdef double[::1] dg = np.empty(J)
    cdef double[::1] up = np.empty(J)
    cdef double[::1] r = np.empty(J)
    cdef double[::1] cp = np.empty(J)
    cdef double inv_dx2 = 1.0 / (dx * dx)
    cdef double inv_2dx = 0.5 / dx
    cdef double inv_dt = 1.0 / dt
    cdef double den, B, f, fv, vv, m
    cdef Py_ssize_t n, j, s
    save = set(int(q) for q in save_steps)
    saved = {}
    if 0 in save:
        saved[0] = np.asarray(v).copy()
    for n in range(nsteps):
        s = seg[n]
        for j in range(J):
            vv = v[j]
            den = vv + E[s, j]
            if den <= 0.0:
                raise FloatingPointError(f"v + eta <= 0 at backward step {n}")
            B = L[s, j] / den
            f = -(A[s, j] + B) * vv * vv + G[s, j]
            fv = -2.0 * (A[s, j] + B) * vv + L[s, j] * vv * vv / (den * den)
            lo[j] = -(D[s, j] * inv_dx2 - MU[s, j] * inv_2dx)
            up[j] = -(D[s, j] * inv_dx2 + MU[s, j] * inv_2dx)
            dg[j] = inv_dt + 2.0 * D[s, j] * inv_dx2 - fv
            r[j] = vv * inv_dt + f - fv * vv
        up[0] = -2.0 * D[s, 0] * inv_dx2
        lo[J - 1] = -2.0 * D[s, J - 1] * inv_dx2
        # Thomas algorithm
        cp[0] = up[0] / dg[0]
        r[0] = r[0] / dg[0]
        for j in range(1, J):
            m = dg[j] - lo[j] * cp[j - 1]
            cp[j] = up[j] / m
            r[j] = (r[j] - lo[j] * r[j - 1]) / m
        v[J - 1] = r[J - 1]
        for j in range(J - 2, -1, -1):
            v[j] = r[j] - cp[j] * v[j + 1]
        if n + 1 in save:
            saved[n + 1] = np.asarray(v).copy()
    return np.asarray(v).copy(), saved


cdef inline void _lag3(double th, double* w) nogil:
    w[0] = 2.0 * (th - 0.5) * (th - 1.0)
    w[1] = -4.0 * th * (th - 1.0)
    w[2] = 2.0 * th * (th - 0.5)


cdef void _stage_deriv(Py_ssize_t n, Py_ssize_t m, Py_ssize_t Q, double* Y,
                       double* pi0, double* Pi, double* q0, double* q1, double* q2,
                       double* dX, double* dc) nogil:
    """dX = pi0 + Pi Y and dc = q0 + q1.Y + Y'q2 Y for one stage (interpolated samples)."""
    cdef Py_ssize_t i, a, b, q
    cdef double s, t
    for i in range(n):
        s = pi0[i]
        for a in range(m):
            s += Pi[i * m + a] * Y[a]
        dX[i] = s
    for q in range(Q):
        s = q0[q]
        for a in range(m):
            s += q1[q * m + a] * Y[a]
            t = 0.0
            for b in range(m):
                t += q2[(q * m + a) * m + b] * Y[b]
            s += Y[a] * t
        dc[q] = s


def sim_chunk(tab, ev_ptr, ev_cell, ev_theta, ev_kind, ev_sec, ev_mark, x0, S_nodes, diag_nodes,
              double guard):
    """Per-path simulation; numerically equivalent to the numpy fallback.

    Whole cells without events use the precomputed cell maps; cells with
    events are integrated piecewise by RK4 on the state, which reproduces
    the map coefficients exactly because every stage is affine in the state.
    """
    lay = tab.layout
    cdef Py_ssize_t n = lay.n, m = lay.m
    cdef bint stoch = lay.stochastic
    cdef double h = tab.h
    cdef const double[:, :, ::1] PI0 = np.ascontiguousarray(tab.pi0)
    cdef Py_ssize_t N = PI0.shape[0]
    cdef const double[:, :, :, ::1] PIM = np.ascontiguousarray(tab.Pi)
    cdef const double[:, :, ::1] Q0 = np.ascontiguousarray(tab.q0)
    cdef Py_ssize_t Q = Q0.shape[2]
    cdef const double[:, :, :, ::1] Q1 = np.ascontiguousarray(tab.q1)
    cdef const double[:, :, :, :, ::1] Q2 = np.ascontiguousarray(tab.q2)
    cdef const double[:, :, :, ::1] J0 = np.ascontiguousarray(tab.jump0)
    cdef const double[:, :, :, :, ::1] J1 = np.ascontiguousarray(tab.jump1)
    cdef const double[:, ::1] BS = np.ascontiguousarray(tab.b)
    cdef const double[:, ::1] ET = np.ascontiguousarray(tab.eta_tilde)
    cdef const double[:, ::1] XI = np.ascontiguousarray(tab.xi)
    cdef const double[:, ::1] XIT = np.ascontiguousarray(tab.xi_tilde)
    g0a, g1a, c0a, c1a, c2a = tab.full
    cdef const double[:, ::1] G0 = np.ascontiguousarray(g0a)
    cdef const double[:, :, ::1] G1 = np.ascontiguousarray(g1a)
    cdef const double[:, ::1] C0 = np.ascontiguousarray(c0a)
    cdef const double[:, :, ::1] C1 = np.ascontiguousarray(c1a)
    cdef const double[:, :, :, ::1] C2 = np.ascontiguousarray(c2a)

    cdef const long[::1] ptr = np.ascontiguousarray(ev_ptr, dtype=np.int64)
    cdef const long[::1] ecell = np.ascontiguousarray(ev_cell, dtype=np.int64)
    cdef const double[::1] eth = np.ascontiguousarray(ev_theta, dtype=np.float64)
    cdef const signed char[::1] ekind = np.ascontiguousarray(ev_kind, dtype=np.int8)
    cdef const long[::1] esec = np.ascontiguousarray(ev_sec, dtype=np.int64)
    cdef const double[::1] emark = np.ascontiguousarray(ev_mark, dtype=np.float64)
    cdef const double[::1] xinit = np.ascontiguousarray(x0, dtype=np.float64)
    cdef const double[:, :, ::1] SN
    if stoch:
        SN = np.ascontiguousarray(S_nodes, dtype=np.float64)
    cdef Py_ssize_t P = ptr.shape[0] - 1
    cdef const long[::1] dnodes = np.ascontiguousarray(diag_nodes, dtype=np.int64)
    cdef Py_ssize_t nd = dnodes.shape[0]
    dpos_arr = np.full(N + 1, -1, dtype=np.int64)
    for j, kk in enumerate(diag_nodes):
        dpos_arr[int(kk)] = j
    cdef long[::1] dpos = dpos_arr

    acc_a = np.zeros((P, Q))
    cdef double[:, ::1] acc = acc_a
    spread_a = np.zeros(P)
    cdef double[::1] spread = spread_a
    dark_a = np.zeros(P)
    sprev_a = np.zeros(P)
    cdef double[::1] sprev = sprev_a
    cdef double[::1] darkraw = dark_a
    XT_a = np.zeros((P, n))
    cdef double[:, ::1] XT = XT_a
    sumz_a = np.zeros((P, n))
    cdef double[:, ::1] sumz = sumz_a
    ncust_a = np.zeros((P, n))
    cdef double[:, ::1] ncust = ncust_a
    nfill_a = np.zeros((P, n))
    cdef double[:, ::1] nfill = nfill_a
    sumd_a = np.zeros((P, n))
    cdef double[:, ::1] sumdelta = sumd_a
    Xd_a = np.zeros((P, nd, n))
    cdef double[:, :, ::1] Xd = Xd_a
    Jd_a = np.zeros((P, nd))
    cdef double[:, ::1] Jd = Jd_a
    ab_a = np.zeros(P, dtype=np.uint8)
    cdef unsigned char[::1] aborted = ab_a
    tJ_a = np.zeros(P)
    cdef double[::1] termJ = tJ_a
    tR_a = np.zeros(P)
    cdef double[::1] termR = tR_a

    # scratch: interpolated stage samples and RK4 work space
    cdef double[:, ::1] spi0 = np.empty((3, n))
    cdef double[:, ::1] sPi = np.empty((3, n * m))
    cdef double[:, ::1] sq0 = np.empty((3, Q))
    cdef double[:, ::1] sq1 = np.empty((3, Q * m))
    cdef double[:, ::1] sq2 = np.empty((3, Q * m * m))
    cdef double[::1] y = np.empty(m)
    cdef double[::1] Y = np.empty(m)
    cdef double[::1] Xs = np.empty(n)
    cdef double[:, ::1] kX = np.empty((4, n))
    cdef double[:, ::1] kc = np.empty((4, Q))
    cdef double[::1] yn = np.empty(n)
    cdef double w[3]
    cdef double ths[3]
    cdef Py_ssize_t p, k, e, eend, i, j2, a, b, q, st, r, sec
    cdef double ta, tb, L, th, s, t, z, stv, sdv, dlt, fac, sgn
    cdef bint is_event
    cdef double stage_fac[4]
    cdef int stage_src[4]
    stage_fac[0] = 0.0; stage_fac[1] = 0.5; stage_fac[2] = 0.5; stage_fac[3] = 1.0
    stage_src[0] = 0; stage_src[1] = 1; stage_src[2] = 1; stage_src[3] = 2

    for p in range(P):
        for i in range(n):
            Xs[i] = xinit[i]
        e = ptr[p]
        eend = ptr[p + 1]
        if dpos[0] >= 0:
            for i in range(n):
                Xd[p, dpos[0], i] = Xs[i]
        for k in range(N):
            for i in range(n):
                y[i] = Xs[i]
            if stoch:
                for i in range(n):
                    y[n + i] = SN[p, k, i]
                    y[2 * n + i] = SN[p, k + 1, i]
            if e < eend and ecell[e] == k:
                ta = 0.0
                while True:
                    is_event = e < eend and ecell[e] == k
                    tb = eth[e] if is_event else 1.0
                    # stage samples at ta, mid, tb
                    ths[0] = ta; ths[1] = 0.5 * (ta + tb); ths[2] = tb
                    for j2 in range(3):
                        _lag3(ths[j2], w)
                        for i in range(n):
                            spi0[j2, i] = w[0] * PI0[k, 0, i] + w[1] * PI0[k, 1, i] + w[2] * PI0[k, 2, i]
                            for a in range(m):
                                sPi[j2, i * m + a] = (w[0] * PIM[k, 0, i, a] + w[1] * PIM[k, 1, i, a]
                                                      + w[2] * PIM[k, 2, i, a])
                        for q in range(Q):
                            sq0[j2, q] = w[0] * Q0[k, 0, q] + w[1] * Q0[k, 1, q] + w[2] * Q0[k, 2, q]
                            for a in range(m):
                                sq1[j2, q * m + a] = (w[0] * Q1[k, 0, q, a] + w[1] * Q1[k, 1, q, a]
                                                      + w[2] * Q1[k, 2, q, a])
                                for b in range(m):
                                    sq2[j2, (q * m + a) * m + b] = (w[0] * Q2[k, 0, q, a, b]
                                                                    + w[1] * Q2[k, 1, q, a, b]
                                                                    + w[2] * Q2[k, 2, q, a, b])
                    L = (tb - ta) * h
                    for st in range(4):
                        for a in range(m):
                            Y[a] = y[a]
                        if st > 0:
                            for i in range(n):
                                Y[i] = Xs[i] + stage_fac[st] * L * kX[st - 1, i]
                        j2 = stage_src[st]
                        _stage_deriv(n, m, Q, &Y[0], &spi0[j2, 0], &sPi[j2, 0], &sq0[j2, 0],
                                     &sq1[j2, 0], &sq2[j2, 0], &kX[st, 0], &kc[st, 0])
                    for i in range(n):
                        Xs[i] = Xs[i] + L / 6.0 * (kX[0, i] + 2.0 * kX[1, i] + 2.0 * kX[2, i] + kX[3, i])
                        y[i] = Xs[i]
                    for q in range(Q):
                        acc[p, q] += L / 6.0 * (kc[0, q] + 2.0 * kc[1, q] + 2.0 * kc[2, q] + kc[3, q])
                    if not is_event:
                        break
                    # jump at tb
                    th = tb
                    _lag3(th, w)
                    sec = esec[e]
                    for r in range(3):
                        s = w[0] * J0[k, 0, r, sec] + w[1] * J0[k, 1, r, sec] + w[2] * J0[k, 2, r, sec]
                        for a in range(m):
                            s += (w[0] * J1[k, 0, r, sec, a] + w[1] * J1[k, 1, r, sec, a]
                                  + w[2] * J1[k, 2, r, sec, a]) * y[a]
                        if r == 0:
                            stv = s
                        elif r == 1:
                            sdv = s
                        else:
                            dlt = s
                    if ekind[e] == 0:
                        z = emark[e]
                        sgn = 1.0 if z > 0 else (-1.0 if z < 0 else 0.0)
                        spread[p] += stv * (1.0 - sgn * BS[k, sec]) * z
                        sprev[p] += stv * BS[k, sec] * sgn * z
                        sumz[p, sec] += z
                        ncust[p, sec] += 1.0
                        Xs[sec] += z
                    else:
                        darkraw[p] += sdv * dlt + ET[k, sec] * dlt * dlt
                        nfill[p, sec] += 1.0
                        sumdelta[p, sec] += dlt
                        Xs[sec] += dlt
                    y[sec] = Xs[sec]
                    ta = tb
                    e += 1
            else:
                for i in range(n):
                    s = G0[k, i]
                    for a in range(m):
                        s += G1[k, i, a] * y[a]
                    yn[i] = s
                for q in range(Q):
                    s = C0[k, q]
                    for a in range(m):
                        s += C1[k, q, a] * y[a]
                        t = 0.0
                        for b in range(m):
                            t += C2[k, q, a, b] * y[b]
                        s += y[a] * t
                    acc[p, q] += s
                for i in range(n):
                    Xs[i] = yn[i]
            for i in range(n):
                if not (Xs[i] <= guard and Xs[i] >= -guard):
                    aborted[p] = 1
            if aborted[p]:
                for i in range(n):
                    Xs[i] = 0.0
            if dpos[k + 1] >= 0:
                j2 = dpos[k + 1]
                for i in range(n):
                    Xd[p, j2, i] = Xs[i]
                s = 0.0
                for q in range(6):
                    s += acc[p, q]
                Jd[p, j2] = s
        s = 0.0
        t = 0.0
        for a in range(n):
            XT[p, a] = Xs[a]
            for b in range(n):
                s += Xs[a] * XI[a, b] * Xs[b]
                t += Xs[a] * XIT[a, b] * Xs[b]
        termJ[p] = s
        termR[p] = t
    return {"acc": acc_a, "term_J": tJ_a, "term_raw": tR_a, "spread": spread_a, "spread_revenue": sprev_a,
            "darkraw": dark_a,
            "X_T": XT_a, "sumz": sumz_a, "ncust": ncust_a, "nfill": nfill_a, "sumdelta": sumd_a,
            "Xd": Xd_a, "Jd": Jd_a, "aborted": ab_a.astype(bool)}
