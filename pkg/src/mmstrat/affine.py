"""Linear coefficient V1, constant coefficient V0 and the quadratic value function.

With ``K(s) = M^-1 + diag(lambda/(diag V2 + eta))`` and ``F = V2 K``,

    dV1/ds = F V1 + g,   g = V2 (K S/2 - Theta/2 - b Psi) - (beta b Psi - l)/2,   V1(T) = 0
    dV0/ds = (V1 + S/2)' K (V1 + S/2) - (Phi + b Psi)' V1 - sum_i V2_ii Phi2_i
             - (S' Theta + sum_i beta_ii Phi2_i)/2 + Theta' M Theta/4,           V0(T) = 0

Three independent routes compute V1:

* ``propagator``: ``V1(s) = -Y(s) int_s^T Y(u)^-1 g(u) du`` with ``dY/ds = F Y``,
  per-cell Simpson quadrature;
* ``ode``: direct backward RK4 of the linear equation;
* ``kernel`` (single security): ``V1(t) = -int_t^T exp(-int_t^s F) g(s) ds`` by
  Gauss-Legendre quadrature on the Hermite dense output of V2.

For an OU price the slope splits as ``V1 = A + Q (S - theta)`` where ``A``
solves the equation with ``S`` frozen at ``theta`` and
``dQ/ds = F Q + Q diag(kappa) + F/2``, ``Q(T) = 0``.  V0 under a stochastic
price uses the expectation curve and is flagged approximate.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import NumericalError
from .grid import TimeGrid, hermite
from .riccati import V2Path, solve_v2

THETAS = np.array([0.0, 0.5, 1.0])
_GL = np.polynomial.legendre.leggauss(8)


def _diag(v):
    n = v.shape[-1]
    out = np.zeros(v.shape + (n,))
    i = np.arange(n)
    out[..., i, i] = v
    return out


def _k_matrix(V2, Minv, lam, eta):
    d = np.diagonal(V2, axis1=-2, axis2=-1) + eta
    if np.min(d) < 1e-12:
        raise NumericalError(f"denominator V2_ii + eta = {np.min(d):.3g} below 1e-12")
    return Minv + _diag(lam / d)


def k_samples(v2: V2Path, cells):
    """K at cell samples, (N, 3, n, n)."""
    return _k_matrix(v2.cell_samples(), cells.Minv, cells.lam, cells.eta)


def compute_F(v2: V2Path, cells):
    """F = V2 K at cell samples, (N, 3, n, n)."""
    return v2.cell_samples() @ k_samples(v2, cells)


def _mv(A, x):
    return np.einsum("...ij,...j->...i", A, x)


@dataclass(frozen=True, eq=False)
class PropagatorPath:
    grid: TimeGrid
    anchor_index: int
    Y: np.ndarray  # (N+1, n, n); NaN before the anchor
    Yinv: np.ndarray

    def inverse_error(self):
        k = self.anchor_index
        eye = np.eye(self.Y.shape[-1])
        return float(np.max(np.abs(self.Y[k:] @ self.Yinv[k:] - eye)))


def propagator(F, grid: TimeGrid, anchor: float = 0.0) -> PropagatorPath:
    """Forward RK4 for ``dY/ds = F Y`` and ``dY^-1/ds = -Y^-1 F`` from ``Y(anchor) = I``.

    ``F`` holds cell samples (N, 3, n, n); ``anchor`` must be a grid node.
    """
    k0 = grid.index_of(anchor)
    N, h = grid.steps, grid.h
    n = F.shape[-1]
    Y = np.full((N + 1, n, n), np.nan)
    Yi = np.full((N + 1, n, n), np.nan)
    Y[k0] = np.eye(n)
    Yi[k0] = np.eye(n)
    y, yi = np.eye(n), np.eye(n)
    for k in range(k0, N):
        f0, fm, f1 = F[k]
        k1 = f0 @ y
        k2 = fm @ (y + 0.5 * h * k1)
        k3 = fm @ (y + 0.5 * h * k2)
        k4 = f1 @ (y + h * k3)
        y = y + h / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4)
        j1 = -yi @ f0
        j2 = -(yi + 0.5 * h * j1) @ fm
        j3 = -(yi + 0.5 * h * j2) @ fm
        j4 = -(yi + h * j3) @ f1
        yi = yi + h / 6.0 * (j1 + 2 * j2 + 2 * j3 + j4)
        if not (np.all(np.isfinite(y)) and np.all(np.isfinite(yi))) or np.max(np.abs(y)) > 1e300:
            raise NumericalError(f"propagator overflow at t={grid.times[k + 1]:.6g}")
        Y[k + 1], Yi[k + 1] = y, yi
    return PropagatorPath(grid=grid, anchor_index=k0, Y=Y, Yinv=Yi)


def _price_for_source(cells, price):
    """Price samples entering g: the mean curve, or the OU split level."""
    if price is not None and price.stochastic:
        return np.broadcast_to(price.anchor, cells.S.shape)
    return cells.S


def source_g(v2: V2Path, cells, S=None):
    """Inhomogeneity g at cell samples, (N, 3, n)."""
    S = cells.S if S is None else S
    V = v2.cell_samples()
    K = _k_matrix(V, cells.Minv, cells.lam, cells.eta)
    bpsi = cells.b * cells.psi
    A = _mv(K, 0.5 * S) - 0.5 * cells.theta - bpsi
    alpha = 0.5 * (_mv(cells.beta, bpsi) - cells.l)
    return _mv(V, A) - alpha


@dataclass(frozen=True, eq=False)
class V1Path:
    grid: TimeGrid
    values: np.ndarray  # (N+1, n): A part (the full V1 for a deterministic price)
    slopes: np.ndarray  # (N, 2, n)
    Q: np.ndarray | None = None  # (N+1, n, n) price loading for an OU price
    Qslopes: np.ndarray | None = None
    level: np.ndarray | None = None  # theta in V1 = A + Q (S - theta)
    method: str = "propagator"

    def cell_samples(self):
        mid = hermite(self.values[:-1], self.values[1:], self.slopes[:, 0], self.slopes[:, 1],
                      self.grid.h, 0.5)
        return np.stack([self.values[:-1], mid, self.values[1:]], axis=1)

    def q_samples(self):
        if self.Q is None:
            return None
        mid = hermite(self.Q[:-1], self.Q[1:], self.Qslopes[:, 0], self.Qslopes[:, 1], self.grid.h, 0.5)
        return np.stack([self.Q[:-1], mid, self.Q[1:]], axis=1)

    def at(self, t, S=None):
        k, th = self.grid.locate(t)
        v = hermite(self.values[k], self.values[k + 1], self.slopes[k, 0], self.slopes[k, 1],
                    self.grid.h, th[..., None])
        if self.Q is not None and S is not None:
            q = hermite(self.Q[k], self.Q[k + 1], self.Qslopes[k, 0], self.Qslopes[k, 1],
                        self.grid.h, th[..., None, None])
            v = v + _mv(q, np.asarray(S) - self.level)
        return v


def _slopes(F, g, values):
    """dV1/ds at the two ends of every cell with cell-side coefficients."""
    s0 = _mv(F[:, 0], values[:-1]) + g[:, 0]
    s1 = _mv(F[:, 2], values[1:]) + g[:, 2]
    return np.stack([s0, s1], axis=1)


def _v1_propagator(F, g, grid):
    prop = propagator(F, grid, 0.0)
    Y, Yi = prop.Y, prop.Yinv
    h = grid.h
    # Y^-1 at midpoints by Hermite with the exact derivative -Y^-1 F
    d0 = -Yi[:-1] @ F[:, 0]
    d1 = -Yi[1:] @ F[:, 2]
    Yi_mid = hermite(Yi[:-1], Yi[1:], d0, d1, h, 0.5)
    f0 = _mv(Yi[:-1], g[:, 0])
    fm = _mv(Yi_mid, g[:, 1])
    f1 = _mv(Yi[1:], g[:, 2])
    pieces = (h / 6.0) * (f0 + 4.0 * fm + f1)
    tail = np.zeros((grid.steps + 1, g.shape[-1]))
    tail[:-1] = np.cumsum(pieces[::-1], axis=0)[::-1]
    return -_mv(Y, tail)


def _v1_ode(F, g, grid, kappa=None):
    """Backward RK4 for dV/ds = F V + g (or dQ/ds = F Q + Q diag(kappa) + F/2)."""
    N, h = grid.steps, grid.h
    n = F.shape[-1]
    if kappa is None:
        out = np.zeros((N + 1, n))
        rhs = lambda j, k, v: F[k, j] @ v + g[k, j]
        v = np.zeros(n)
    else:
        out = np.zeros((N + 1, n, n))
        rhs = lambda j, k, q: F[k, j] @ q + q * kappa + 0.5 * F[k, j]
        v = np.zeros((n, n))
    dt = -h
    for k in range(N - 1, -1, -1):
        k1 = rhs(2, k, v)
        k2 = rhs(1, k, v + 0.5 * dt * k1)
        k3 = rhs(1, k, v + 0.5 * dt * k2)
        k4 = rhs(0, k, v + dt * k3)
        v = v + dt / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4)
        out[k] = v
    return out


def _v1_kernel(v2: V2Path, cells, S_fn):
    """Exponential-kernel representation for one security."""
    grid = v2.grid
    N, h = grid.steps, grid.h
    x, w = _GL
    q = 0.5 * (x + 1.0)  # nodes in [0, 1]
    wq = 0.5 * w
    Minv = cells.Minv[:, 1, 0, 0]
    lam = cells.lam[:, 1, 0]
    eta = cells.eta[:, 1, 0]
    bpsi = (cells.b * cells.psi)[:, 1, 0]
    theta = cells.theta[:, 1, 0]
    alpha = 0.5 * (cells.beta[0, 0] * bpsi - cells.l[:, 1, 0])
    k = np.arange(N)[:, None]

    def v2_at(th):
        return hermite(v2.values[k, 0, 0], v2.values[k + 1, 0, 0], v2.slopes[k, 0, 0, 0],
                       v2.slopes[k, 1, 0, 0], h, th)

    def r_at(th):
        v = v2_at(th)
        return (Minv[:, None] + lam[:, None] / (v + eta[:, None])) * v

    # integral of r over each whole cell and over [t_k, t_k + q_j h]
    r_full = h * np.sum(wq * r_at(q[None, :]), axis=1)
    partial = np.empty((N, q.size))
    for j, qj in enumerate(q):
        partial[:, j] = qj * h * np.sum(wq * r_at(qj * q[None, :]), axis=1)
    v = v2_at(q[None, :])
    Kq = Minv[:, None] + lam[:, None] / (v + eta[:, None])
    Sq = S_fn(grid.times[:-1, None] + q[None, :] * h)
    A = Kq * 0.5 * Sq - 0.5 * theta[:, None] - bpsi[:, None]
    gq = v * A - alpha[:, None]
    I = h * np.sum(wq * np.exp(-partial) * gq, axis=1)  # int_cell exp(-int_{t_j}^s r) g ds
    C = np.concatenate([[0.0], np.cumsum(r_full)])  # int_0^{t_j} r
    # V1(t_k) = -sum_{j>=k} exp(-(C_j - C_k)) I_j
    shift = C[-1]
    terms = np.exp(-(C[:-1] - shift)) * I
    tail = np.concatenate([np.cumsum(terms[::-1])[::-1], [0.0]])
    return (-np.exp(C - shift) * tail)[:, None]


def solve_v1(cells, v2: V2Path, price=None, method: str = "propagator") -> V1Path:
    """V1 on the grid.  ``price`` enables the OU split; ``method`` picks the route."""
    grid = v2.grid
    F = compute_F(v2, cells)
    S = _price_for_source(cells, price)
    g = source_g(v2, cells, S)
    if method == "propagator":
        values = _v1_propagator(F, g, grid)
    elif method == "ode":
        values = _v1_ode(F, g, grid)
    elif method == "kernel":
        if cells.n != 1:
            raise ValueError("the exponential-kernel route covers a single security")
        if price is not None and price.stochastic:
            S_fn = lambda t: np.full(np.shape(t), float(price.anchor[0]))
        elif price is not None:
            S_fn = lambda t: price.mean(t)[..., 0]
        else:
            S_fn = lambda t: np.full(np.shape(t), float(cells.S[0, 1, 0]))
        values = _v1_kernel(v2, cells, S_fn)
    else:
        raise ValueError(f"unknown V1 method '{method}'")
    if not np.all(np.isfinite(values)):
        raise NumericalError("V1 overflowed")
    Q = Qs = level = None
    if price is not None and price.stochastic:
        Q = _v1_ode(F, None, grid, kappa=price.kappa)
        Qs = np.stack([F[:, 0] @ Q[:-1] + Q[:-1] * price.kappa + 0.5 * F[:, 0],
                       F[:, 2] @ Q[1:] + Q[1:] * price.kappa + 0.5 * F[:, 2]], axis=1)
        level = price.anchor
    return V1Path(grid=grid, values=values, slopes=_slopes(F, g, values), Q=Q, Qslopes=Qs,
                  level=level, method=method)


@dataclass(frozen=True, eq=False)
class V0Path:
    grid: TimeGrid
    values: np.ndarray  # (N+1,)
    approximate: bool = False


def v0_driver(v2: V2Path, v1: V1Path, cells, S=None):
    """The V0 driver a0 at cell samples, (N, 3)."""
    S = cells.S if S is None else S
    V = v2.cell_samples()
    K = _k_matrix(V, cells.Minv, cells.lam, cells.eta)
    V1 = v1.cell_samples()
    if v1.Q is not None:
        V1 = V1 + _mv(v1.q_samples(), S - v1.level)
    u = V1 + 0.5 * S
    bpsi = cells.b * cells.psi
    diagV = np.diagonal(V, axis1=-2, axis2=-1)
    diagB = np.diagonal(cells.beta)
    return (np.einsum("...i,...ij,...j->...", u, K, u)
            - np.einsum("...i,...i->...", cells.phi + bpsi, V1)
            - np.sum(diagV * cells.phi2, axis=-1)
            - 0.5 * (np.einsum("...i,...i->...", S, cells.theta) + np.sum(diagB * cells.phi2, axis=-1))
            + 0.25 * np.einsum("...i,...ij,...j->...", cells.theta, cells.M, cells.theta))


def solve_v0(cells, v2: V2Path, v1: V1Path, price=None) -> V0Path:
    """V0(t) = -int_t^T a0 ds by per-cell Simpson quadrature."""
    grid = v2.grid
    a0 = v0_driver(v2, v1, cells)
    pieces = (grid.h / 6.0) * (a0[:, 0] + 4.0 * a0[:, 1] + a0[:, 2])
    vals = np.zeros(grid.steps + 1)
    vals[:-1] = -np.cumsum(pieces[::-1])[::-1]
    return V0Path(grid=grid, values=vals, approximate=bool(price is not None and price.stochastic))


def value_function(v2: V2Path, v1: V1Path, v0: V0Path, t, x, S=None):
    """x' V2(t) x + 2 x' V1(t) + V0(t), Hermite in t (linear for V0 inside a cell)."""
    grid = v2.grid
    t = float(t)
    if not 0.0 <= t <= grid.horizon + 1e-12:
        raise ValueError(f"t = {t} outside [0, T]")
    x = np.asarray(x, dtype=float).reshape(-1)
    V2 = v2.at(np.array(t))
    V1 = v1.at(np.array(t), S)
    k, th = grid.locate(np.array(t))
    v0 = (1 - th) * v0.values[k] + th * v0.values[k + 1]
    return float(x @ V2 @ x + 2.0 * x @ V1 + v0)


@dataclass(frozen=True, eq=False)
class AffineSolution:
    cells: object
    v2: V2Path
    v1: V1Path
    v0: V0Path
    F: np.ndarray

    def value(self, t, x, S=None):
        return value_function(self.v2, self.v1, self.v0, t, x, S)


def solve_affine(spec, grid=None, xi=None, method: str = "propagator") -> AffineSolution:
    """Solve V2, V1, V0 for a model with time-only coefficients."""
    cells = spec.cells(grid)
    v2 = solve_v2(cells, xi)
    v1 = solve_v1(cells, v2, spec.raw.price, method)
    v0 = solve_v0(cells, v2, v1, spec.raw.price)
    return AffineSolution(cells=cells, v2=v2, v1=v1, v0=v0, F=compute_F(v2, cells))
