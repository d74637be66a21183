"""Backward Riccati solver for the quadratic value-function coefficient V2.

    dV2/ds = V2 (M^-1 + diag(lambda/(diag V2 + eta))) V2 - gamma,   V2(T) = xi

Coefficients are time-only and constant inside each grid cell, so every
cell is an autonomous problem.  Each cell is integrated with classical RK4
using an even number of substeps chosen from the local stiffness
``rho = 2|V2|(|M^-1| + max lambda/(V2_ii + eta))``; the cell midpoint is
therefore always a substep node and is stored exactly.

Dense output is cubic Hermite on the node values and the driver slopes.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import NumericalError
from .grid import TimeGrid, hermite

RHO_TOL = 0.02  # target h*rho per substep
DENOM_REFINE = 1e-6
DENOM_FAIL = 1e-12
SYM_TOL = 1e-10
PSD_FLOOR = -1e-8
MAX_SUBSTEPS = 1 << 16


@dataclass(frozen=True, eq=False)
class V2Path:
    grid: TimeGrid
    values: np.ndarray  # (N+1, n, n)
    mid: np.ndarray  # (N, n, n) values at cell midpoints
    slopes: np.ndarray  # (N, 2, n, n) dV2/ds at cell start / end (cell coefficients)
    substeps: np.ndarray  # (N,)
    scheme: str = "rk4-substepped"

    @property
    def n(self):
        return self.values.shape[-1]

    def cell_samples(self):
        """Values at theta = 0, 1/2, 1 of every cell, shape (N, 3, n, n)."""
        return np.stack([self.values[:-1], self.mid, self.values[1:]], axis=1)

    def at(self, t):
        """Hermite interpolation at time(s) ``t``; shape ``t.shape + (n, n)``."""
        k, th = self.grid.locate(t)
        th = th[..., None, None]
        return hermite(self.values[k], self.values[k + 1], self.slopes[k, 0], self.slopes[k, 1],
                       self.grid.h, th)


def _driver(V, Minv, lam, eta, gamma):
    d = np.diagonal(V, axis1=-2, axis2=-1) + eta
    K = Minv + _diag(lam / d)
    return V @ K @ V - gamma


def _diag(v):
    n = v.shape[-1]
    out = np.zeros(v.shape + (n,))
    idx = np.arange(n)
    out[..., idx, idx] = v
    return out


def _substep_count(h, vnorm, minv_norm, lam_over_d, dmin):
    """Even substep count from the local stiffness estimate."""
    if dmin < DENOM_FAIL:
        raise NumericalError(f"denominator V2_ii + eta = {dmin:.3g} below {DENOM_FAIL:g}")
    rho = 2.0 * vnorm * (minv_norm + lam_over_d)
    m = max(1, math.ceil(h * rho / RHO_TOL))
    if dmin < DENOM_REFINE:
        m *= 8
    m += m % 2
    if m > MAX_SUBSTEPS:
        raise NumericalError(f"Riccati step rejection overflow ({m} substeps needed)")
    return m


def _cell_scalar(v, h, m, a, lam, eta, g):
    """One cell of the scalar equation backwards from v(t_{k+1}); returns (v_k, v_mid)."""
    f = lambda x: x * (a + lam / (x + eta)) * x - g
    dt = -h / m
    mid = None
    for j in range(m):
        k1 = f(v)
        k2 = f(v + 0.5 * dt * k1)
        k3 = f(v + 0.5 * dt * k2)
        k4 = f(v + dt * k3)
        v = v + dt / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        if v + eta < DENOM_FAIL:
            raise NumericalError(f"denominator V2 + eta = {v + eta:.3g} below {DENOM_FAIL:g}")
        if 2 * (j + 1) == m:
            mid = v
    return v, mid


def _cell_matrix(V, h, m, Minv, lam, eta, g):
    dt = -h / m
    mid = None
    f = lambda X: _driver(X, Minv, lam, eta, g)
    for j in range(m):
        k1 = f(V)
        k2 = f(V + 0.5 * dt * k1)
        k3 = f(V + 0.5 * dt * k2)
        k4 = f(V + dt * k3)
        V = V + dt / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        V = 0.5 * (V + V.T)
        if 2 * (j + 1) == m:
            mid = V
    return V, mid


def _coeffs(cells):
    """Per-cell constants used by the driver (cell midpoint sample)."""
    return (cells.Minv[:, 1], cells.lam[:, 1], cells.eta[:, 1], cells.gamma[:, 1])


def solve_v2(cells, xi=None) -> V2Path:
    """Backward solve on ``cells.grid``; ``xi`` overrides the terminal value."""
    grid = cells.grid
    N, h = grid.steps, grid.h
    Minv, lam, eta, gam = _coeffs(cells)
    n = Minv.shape[-1]
    xi = cells.xi if xi is None else np.asarray(xi, dtype=float).reshape(n, n)
    values = np.empty((N + 1, n, n))
    mid = np.empty((N, n, n))
    subs = np.empty(N, dtype=np.int64)
    values[N] = xi
    V = np.array(xi, dtype=float)
    scalar = n == 1
    minv_norm = np.linalg.norm(Minv, 2, axis=(1, 2))
    if scalar:
        a_, l_, e_, g_ = (Minv[:, 0, 0].tolist(), lam[:, 0].tolist(), eta[:, 0].tolist(),
                          gam[:, 0, 0].tolist())
        v = float(V[0, 0])
        for k in range(N - 1, -1, -1):
            d = v + e_[k]
            m = _substep_count(h, abs(v), a_[k], l_[k] / d if d > 0 else 0.0, d)
            subs[k] = m
            v, vm = _cell_scalar(v, h, m, a_[k], l_[k], e_[k], g_[k])
            values[k, 0, 0] = v
            mid[k, 0, 0] = vm
    else:
        for k in range(N - 1, -1, -1):
            d = np.diagonal(V) + eta[k]
            dmin = float(d.min())
            m = _substep_count(h, float(np.sqrt(np.sum(V * V))), minv_norm[k],
                               float(np.max(lam[k] / d)) if dmin > 0 else 0.0, dmin)
            subs[k] = m
            V, mid[k] = _cell_matrix(V, h, m, Minv[k], lam[k], eta[k], gam[k])
            _check_psd(V, grid.times[k])
            values[k] = V
    if not np.all(np.isfinite(values)):
        raise NumericalError("Riccati solution overflowed")
    if scalar and np.min(values) < PSD_FLOOR:
        k = int(np.argmin(values[:, 0, 0]))
        raise NumericalError(f"V2 became negative ({values[k, 0, 0]:.3g}) at t={grid.times[k]:.6g}")
    slopes = np.stack([_driver(values[:-1], Minv, lam, eta, gam),
                       _driver(values[1:], Minv, lam, eta, gam)], axis=1)
    return V2Path(grid=grid, values=values, mid=mid, slopes=slopes, substeps=subs)


def _check_psd(V, t):
    if np.max(np.abs(V - V.T)) > SYM_TOL:
        raise NumericalError(f"V2 lost symmetry at t={t:.6g}")
    ev = np.linalg.eigvalsh(V)[0]
    if ev < PSD_FLOOR:
        raise NumericalError(f"V2 smallest eigenvalue {ev:.3g} below {PSD_FLOOR:g} at t={t:.6g}; "
                             "model assumptions or step size at fault")


def solve_v2_scalar(cells, xi=None) -> V2Path:
    if cells.n != 1:
        raise ValueError("solve_v2_scalar needs a single security")
    return solve_v2(cells, xi)


def solve_v2_matrix(cells, xi=None) -> V2Path:
    try:
        np.linalg.cholesky(cells.M[:, 1])
    except np.linalg.LinAlgError:
        raise NumericalError("M is not positive definite on some cell") from None
    return solve_v2(cells, xi)


def v2_bounds(cells, eps: float, xi=None):
    """Analytic lower/upper bounds on V2 at every grid node (single security).

    lower(t) = 1/(1/xi + int_t^T (1/M + lambda/eta) ds)
    upper(t) = (T-t+eps)^-2 (eps^2 xi + int_t^T (M + (T-s+eps)^2 gamma) ds)

    With cell-constant coefficients both integrals are evaluated exactly.
    """
    if cells.n != 1:
        raise ValueError("bounds are available for a single security only")
    grid = cells.grid
    T, t = grid.horizon, grid.times
    xi = float(cells.xi[0, 0] if xi is None else np.asarray(xi).reshape(-1)[0])
    M = cells.M[:, 1, 0, 0]
    lam = cells.lam[:, 1, 0]
    eta = cells.eta[:, 1, 0]
    gam = cells.gamma[:, 1, 0, 0]
    a, b = T - t[:-1] + eps, T - t[1:] + eps
    i1 = np.zeros(t.size)
    i1[:-1] = np.cumsum(((1.0 / M + lam / eta) * grid.h)[::-1])[::-1]
    i2 = np.zeros(t.size)
    i2[:-1] = np.cumsum((M * grid.h + gam * (a ** 3 - b ** 3) / 3.0)[::-1])[::-1]
    with np.errstate(divide="ignore"):
        lower = 1.0 / (1.0 / xi + i1) if xi > 0 else np.zeros_like(i1)
    upper = (eps ** 2 * xi + i2) / (T - t + eps) ** 2
    return lower, upper
