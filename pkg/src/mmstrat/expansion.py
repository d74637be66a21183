"""Small-diffusion expansion of the factor-driven quadratic coefficient.

For one security whose coefficients depend on a factor ``dX = mu(X) ds +
eps sigma(X) dW``, the quadratic coefficient is ``V(s) = v(s, X_s)`` with

    dv = -f(X, v) ds + Z dW,    f(x, v) = -(1/M(x) + lambda(x)/(v + eta(x))) v^2 + gamma(x),

terminal value ``xi(X_T)``.  Expanding in ``eps`` about the noiseless path X0:

* order 0:  dX0/ds = mu(X0),  dV0/ds = -f(X0, V0),  V0(T) = xi(X0_T)
* order 1:  V1 = y' X1 with dy/ds = -dmu' y - f_v y - f_x,  y(T) = xi_x
* order 2:  V2 = y2' X2 + X1' y1 X1 + y0 where y2 = y,
    dy1/ds = -(y1 J + J' y1) - f_v y1 - 1/2 sum_k y_k mu_k,xx - 1/2 f_vv y y'
             - 1/2 (g y' + y g') - 1/2 f_xx,   g = f_xv,  y1(T) = xi_xx/2
    dy0/ds = -f_v y0 - tr(y1 sigma sigma'),  y0(T) = 0

Here J = dmu (J[j, i] = d mu_j/d x_i).  At the anchor X1 = X2 = 0, hence the
anchored approximation is ``V0 + eps^2 y0``.  Every solve is batched over
anchors sharing a start time.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, NumericalError
from .grid import TimeGrid

DENOM_FAIL = 1e-12


def _val(form, t, x):
    """Scalar value of a (1,) or (1,1) coefficient at states x (P, d) -> (P,)."""
    P = x.shape[0]
    if form.time_only:
        v = form.value(np.full(P, t))
    else:
        v = form.value(np.full(P, t), x)
    return v.reshape(P, -1)[:, 0]


def _grad(form, t, x):
    P, d = x.shape
    if form.time_only:
        return np.zeros((P, d))
    return form.grad(np.full(P, t), x).reshape(P, -1, d)[:, 0]


def _hess(form, t, x):
    P, d = x.shape
    if form.time_only:
        return np.zeros((P, d, d))
    return form.hess(np.full(P, t), x).reshape(P, -1, d, d)[:, 0]


class FactorCoefficients:
    """Analytic evaluation of f, xi and their derivatives for a factor-driven model."""

    def __init__(self, spec):
        if spec.factor is None:
            raise ConfigError("the expansion needs a [factor] section")
        if spec.n != 1:
            raise ConfigError("the expansion covers a single security")
        self.spec = spec
        self.factor = spec.factor
        eff, raw = spec.eff, spec.raw
        self.M, self.lam, self.eta, self.gamma, self.xi = raw.M, raw.lam, eff.eta, eff.gamma, eff.xi

    def coef_time(self, s):
        """Time at which time-only forms are read; callers pass cell midpoints."""
        return s

    def f(self, t, x, v):
        M = _val(self.M, t, x)
        lam = _val(self.lam, t, x)
        d = v + _val(self.eta, t, x)
        if np.min(d) < DENOM_FAIL:
            raise NumericalError(f"denominator v + eta = {np.min(d):.3g} below {DENOM_FAIL:g}")
        return -(1.0 / M + lam / d) * v * v + _val(self.gamma, t, x)

    def f_all(self, t, x, v):
        """Return f, f_v, f_vv, f_x (P,d), f_xx (P,d,d), f_xv (P,d)."""
        M, dM, d2M = _val(self.M, t, x), _grad(self.M, t, x), _hess(self.M, t, x)
        L, dL, d2L = _val(self.lam, t, x), _grad(self.lam, t, x), _hess(self.lam, t, x)
        E, dE, d2E = _val(self.eta, t, x), _grad(self.eta, t, x), _hess(self.eta, t, x)
        G, dG, d2G = _val(self.gamma, t, x), _grad(self.gamma, t, x), _hess(self.gamma, t, x)
        D = v + E
        if np.min(D) < DENOM_FAIL:
            raise NumericalError(f"denominator v + eta = {np.min(D):.3g} below {DENOM_FAIL:g}")
        A = 1.0 / M
        B = L / D
        outer = lambda a, b: a[:, :, None] * b[:, None, :]
        c = lambda s: s[:, None]
        cc = lambda s: s[:, None, None]
        dA = -dM / c(M * M)
        d2A = -d2M / cc(M * M) + 2.0 * outer(dM, dM) / cc(M ** 3)
        dB = dL / c(D) - c(L) * dE / c(D * D)
        d2B = (d2L / cc(D) - (outer(dL, dE) + outer(dE, dL)) / cc(D * D)
               - cc(L) * d2E / cc(D * D) + 2.0 * cc(L) * outer(dE, dE) / cc(D ** 3))
        Bv = -L / (D * D)
        Bvv = 2.0 * L / D ** 3
        Bvx = -dL / c(D * D) + 2.0 * c(L) * dE / c(D ** 3)
        v2 = v * v
        f = -(A + B) * v2 + G
        fv = -2.0 * (A + B) * v - Bv * v2
        fvv = -2.0 * (A + B) - 4.0 * Bv * v - Bvv * v2
        fx = -(dA + dB) * c(v2) + dG
        fxx = -(d2A + d2B) * cc(v2) + d2G
        fxv = -2.0 * (dA + dB) * c(v) - Bvx * c(v2)
        return f, fv, fvv, fx, fxx, fxv

    def xi_all(self, x):
        T = self.spec.horizon
        return _val(self.xi, T, x), _grad(self.xi, T, x), _hess(self.xi, T, x)


@dataclass(frozen=True, eq=False)
class ExpansionSolution:
    """Coefficient paths for a batch of anchors sharing the start time ``t0``.

    Arrays carry the anchor batch first: X0 (P, K+1, d), V0th (P, K+1),
    y (P, K+1, d), y1 (P, K+1, d, d), y0 (P, K+1), on the nodes t0 = s_0 < ... < s_K = T.
    """

    times: np.ndarray
    X0: np.ndarray
    X0mid: np.ndarray
    V0th: np.ndarray
    y: np.ndarray
    y1: np.ndarray
    y0: np.ndarray
    anchor_t: float
    anchor_x: np.ndarray

    @property
    def y2(self):
        return self.y

    @property
    def h(self):
        return self.times[1] - self.times[0]


def solve_order0(coeffs: FactorCoefficients, grid: TimeGrid, t0: float, x0):
    """Forward X0 (half-step RK4 so that cell midpoints are nodes) and backward V0."""
    sol = solve_expansion(coeffs, grid, t0, x0, order=0)
    return sol.X0, sol.V0th


def solve_order1(coeffs, grid, t0, x0):
    return solve_expansion(coeffs, grid, t0, x0, order=1).y


def solve_order2(coeffs, grid, t0, x0):
    sol = solve_expansion(coeffs, grid, t0, x0, order=2)
    return sol.y2, sol.y1, sol.y0


def _forward_x0(factor, x, k0, N, h):
    P, d = x.shape
    X = np.empty((P, N - k0 + 1, d))
    Xm = np.empty((P, N - k0, d))
    X[:, 0] = x
    hh = 0.5 * h

    def step(z):
        k1 = factor.mu(z)
        k2 = factor.mu(z + 0.5 * hh * k1)
        k3 = factor.mu(z + 0.5 * hh * k2)
        k4 = factor.mu(z + hh * k3)
        return z + hh / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4)

    z = x.copy()
    for j in range(N - k0):
        z = step(z)
        Xm[:, j] = z
        z = step(z)
        X[:, j + 1] = z
    if not np.all(np.isfinite(X)):
        raise NumericalError("order-0 factor path overflowed")
    return X, Xm


def solve_expansion(coeffs: FactorCoefficients, grid: TimeGrid, t0: float, x0, order: int = 2
                    ) -> ExpansionSolution:
    """Anchored solve at (t0, x0); ``x0`` may be (d,) or a batch (P, d)."""
    if order not in (0, 1, 2):
        raise ValueError("orders above 2 are not supported")
    fac = coeffs.factor
    d = fac.dim
    x = np.atleast_2d(np.asarray(x0, dtype=float))
    if x.shape[1] != d:
        raise ValueError(f"anchor state must have {d} components")
    P = x.shape[0]
    k0 = grid.index_of(t0)
    N, h = grid.steps, grid.h
    K = N - k0
    X, Xm = _forward_x0(fac, x, k0, N, h)

    xi, dxi, d2xi = coeffs.xi_all(X[:, -1])
    V = np.empty((P, K + 1))
    y = np.zeros((P, K + 1, d))
    y1 = np.zeros((P, K + 1, d, d))
    y0 = np.zeros((P, K + 1))
    V[:, -1] = xi
    if order >= 1:
        y[:, -1] = dxi
    if order >= 2:
        y1[:, -1] = 0.5 * d2xi

    def rhs(tc, z, st):
        v, yy, Y1, Y0 = st
        if order == 0:
            return (-coeffs.f(tc, z, v), None, None, None)
        f, fv, fvv, fx, fxx, fxv = coeffs.f_all(tc, z, v)
        J = fac.dmu(z)  # (P, j, i)
        dy = -np.einsum("pji,pj->pi", J, yy) - fv[:, None] * yy - fx
        if order == 1:
            return (-f, dy, None, None)
        H = fac.d2mu(z)  # (P, k, i, j)
        sig = fac.sigma(z)
        outer_y = yy[:, :, None] * yy[:, None, :]
        gy = fxv[:, :, None] * yy[:, None, :]
        dY1 = (-(Y1 @ J + np.swapaxes(J, 1, 2) @ Y1) - fv[:, None, None] * Y1
               - 0.5 * np.einsum("pk,pkij->pij", yy, H) - 0.5 * fvv[:, None, None] * outer_y
               - 0.5 * (gy + np.swapaxes(gy, 1, 2)) - 0.5 * fxx)
        dY0 = -fv * Y0 - np.einsum("pij,pji->p", Y1, sig @ np.swapaxes(sig, 1, 2))
        return (-f, dy, dY1, dY0)

    def axpy(st, k, a):
        return tuple(None if s is None else s + a * ks for s, ks in zip(st, k))

    st = (V[:, -1].copy(), y[:, -1].copy(), y1[:, -1].copy(), y0[:, -1].copy())
    dt = -h
    for j in range(K - 1, -1, -1):
        tc = grid.times[k0 + j] + 0.5 * h
        k1 = rhs(tc, X[:, j + 1], st)
        k2 = rhs(tc, Xm[:, j], axpy(st, k1, 0.5 * dt))
        k3 = rhs(tc, Xm[:, j], axpy(st, k2, 0.5 * dt))
        k4 = rhs(tc, X[:, j], axpy(st, k3, dt))
        st = tuple(None if s is None else s + dt / 6.0 * (a + 2 * b + 2 * c + e)
                   for s, a, b, c, e in zip(st, k1, k2, k3, k4))
        V[:, j] = st[0]
        if order >= 1:
            y[:, j] = st[1]
        if order >= 2:
            y1[:, j] = st[2]
            y0[:, j] = st[3]
    if not (np.all(np.isfinite(V)) and np.all(np.isfinite(y1)) and np.all(np.isfinite(y0))):
        raise NumericalError("expansion coefficients overflowed")
    return ExpansionSolution(times=grid.times[k0:], X0=X, X0mid=Xm, V0th=V, y=y, y1=y1, y0=y0,
                             anchor_t=float(t0), anchor_x=x)


def approx_value(sol: ExpansionSolution, order: int, epsilon: float):
    """Anchored approximation: V0 for orders 0 and 1, V0 + eps^2 y0 for order 2."""
    if order not in (0, 1, 2):
        raise ValueError("orders above 2 are not supported")
    v = sol.V0th[:, 0]
    if order == 2:
        v = v + epsilon ** 2 * sol.y0[:, 0]
    return v if v.size > 1 else float(v[0])


@dataclass(frozen=True)
class ExpansionPathStats:
    n_paths: int
    x1_mean: np.ndarray  # (K+1, d)
    x1_se: np.ndarray
    v1_mean: np.ndarray  # (K+1,)
    v2_mean: np.ndarray
    resid1_mean: float
    resid1_se: float
    resid2_mean: float
    resid2_se: float
    x1_max_abs: float
    x2_max_abs: float


def simulate_expansion_paths(coeffs: FactorCoefficients, sol: ExpansionSolution, n_paths: int,
                             seed: int, anchor: int = 0) -> ExpansionPathStats:
    """Euler paths of X1, X2 (antithetic pairs) with path-wise V1, V2 and BSDE residuals.

    Residual k is ``V^k_T - V^k_t + int (driver) ds``, a martingale increment for
    the linearised equations, so its mean vanishes.
    """
    fac = coeffs.factor
    d = fac.dim
    half = (n_paths + 1) // 2
    rng = np.random.Generator(np.random.Philox(key=np.uint64(seed)))
    K = sol.times.size - 1
    h = sol.h
    dW = rng.standard_normal((K, half, d)) * np.sqrt(h)
    dW = np.concatenate([dW, -dW], axis=1)[:, :n_paths]
    X0 = sol.X0[anchor]
    x1 = np.zeros((n_paths, d))
    x2 = np.zeros((n_paths, d))
    X1 = np.zeros((K + 1, n_paths, d))
    X2 = np.zeros((K + 1, n_paths, d))
    for k in range(K):
        z = X0[k][None, :]
        J = fac.dmu(z)[0]
        H = fac.d2mu(z)[0]
        sig = fac.sigma(z)[0]
        dsig = fac.dsigma(z)[0]  # (a, b, i)
        dw = dW[k]
        x1_new = x1 + h * x1 @ J.T + dw @ sig.T
        quad = 0.5 * np.einsum("pi,kij,pj->pk", x1, H, x1)
        x2 = x2 + h * (x2 @ J.T + quad) + np.einsum("pi,abi,pb->pa", x1, dsig, dw)
        x1 = x1_new
        X1[k + 1], X2[k + 1] = x1, x2
    y, y1, y0, V = sol.y[anchor], sol.y1[anchor], sol.y0[anchor], sol.V0th[anchor]
    V1 = np.einsum("kpi,ki->kp", X1, y)
    V2 = np.einsum("kpi,ki->kp", X2, y) + np.einsum("kpi,kij,kpj->kp", X1, y1, X1) + y0[:, None]
    drv1 = np.empty((K + 1, n_paths))
    drv2 = np.empty((K + 1, n_paths))
    for k in range(K + 1):
        tc = sol.times[min(k, K - 1)] + 0.5 * h
        z = X0[k][None, :]
        f, fv, fvv, fx, fxx, fxv = coeffs.f_all(tc, z, V[k:k + 1])
        drv1[k] = fv[0] * V1[k] + X1[k] @ fx[0]
        drv2[k] = (fv[0] * V2[k] + X2[k] @ fx[0] + 0.5 * fvv[0] * V1[k] ** 2
                   + (X1[k] @ fxv[0]) * V1[k] + 0.5 * np.einsum("pi,ij,pj->p", X1[k], fxx[0], X1[k]))
    trap = lambda a: h * (0.5 * a[0] + a[1:-1].sum(axis=0) + 0.5 * a[-1])
    r1 = V1[-1] - V1[0] + trap(drv1)
    r2 = V2[-1] - V2[0] + trap(drv2)
    se = lambda a: float(a.std(ddof=1) / np.sqrt(a.size))
    return ExpansionPathStats(
        n_paths=n_paths, x1_mean=X1.mean(axis=1), x1_se=X1.std(axis=1, ddof=1) / np.sqrt(n_paths),
        v1_mean=V1.mean(axis=1), v2_mean=V2.mean(axis=1),
        resid1_mean=float(r1.mean()), resid1_se=se(r1), resid2_mean=float(r2.mean()), resid2_se=se(r2),
        x1_max_abs=float(np.max(np.abs(X1))), x2_max_abs=float(np.max(np.abs(X2))))


@dataclass(frozen=True, eq=False)
class V2Lattice:
    """Order-2 re-anchored V2 on a (time x factor state) lattice, 1-factor models.

    ``values[j, i]`` is the anchored approximation at (times[j], states[i]);
    evaluation is bilinear in (t, x) and clamps x to the lattice range.
    """

    times: np.ndarray
    states: np.ndarray
    values: np.ndarray
    epsilon: float

    def __call__(self, t, x):
        t = np.asarray(t, dtype=float)
        x = np.clip(np.asarray(x, dtype=float), self.states[0], self.states[-1])
        j = np.clip(np.searchsorted(self.times, t, side="right") - 1, 0, self.times.size - 2)
        a = (t - self.times[j]) / (self.times[j + 1] - self.times[j])
        i = np.clip(np.searchsorted(self.states, x, side="right") - 1, 0, self.states.size - 2)
        b = (x - self.states[i]) / (self.states[i + 1] - self.states[i])
        v = self.values
        return ((1 - a) * ((1 - b) * v[j, i] + b * v[j, i + 1])
                + a * ((1 - b) * v[j + 1, i] + b * v[j + 1, i + 1]))


def build_v2_lattice(coeffs: FactorCoefficients, grid: TimeGrid, n_times: int = 21, n_states: int = 41,
                     half_width: float | None = None) -> V2Lattice:
    """Re-anchor the order-2 expansion at every lattice point (times on grid nodes)."""
    fac = coeffs.factor
    if fac.dim != 1:
        raise ConfigError("the re-anchoring lattice supports one factor")
    eps = fac.epsilon
    if half_width is None:
        half_width = 6.0 * eps * fac.sigma_bar() * np.sqrt(grid.horizon) + 0.5
    idx = np.unique(np.linspace(0, grid.steps, n_times).round().astype(int))
    states = np.linspace(fac.x0[0] - half_width, fac.x0[0] + half_width, n_states)
    values = np.empty((idx.size, n_states))
    for j, k in enumerate(idx):
        if k == grid.steps:
            values[j] = coeffs.xi_all(states[:, None])[0]
            continue
        sol = solve_expansion(coeffs, grid, grid.times[k], states[:, None], order=2)
        values[j] = sol.V0th[:, 0] + eps ** 2 * sol.y0[:, 0]
    return V2Lattice(times=grid.times[idx], states=states, values=values, epsilon=eps)
