"""Independent reference solvers used for validation only.

* :func:`closed_form_riccati`: the scalar equation without dark pool or running penalty.
* :func:`solve_pde_1d`: finite differences for the semilinear PDE of the factor-driven
  quadratic coefficient,

      v_t + mu v_x + (eps sigma)^2/2 v_xx + f(x, v) = 0,   v(T, x) = xi(x),

  by linearly-implicit Euler (implicit advection/diffusion, reaction linearised
  with one Newton correction), central differences and Neumann ghost nodes.
* :func:`pde_reference`: Richardson extrapolation of :func:`solve_pde_1d` in
  time (three levels) and space (two levels) with an error estimate.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .errors import ConfigError, NumericalError


def closed_form_riccati(xi, M, T, t):
    """1/(1/xi + (T - t)/M); equals ``xi`` at t = T (also for xi = 0)."""
    xi = np.asarray(xi, dtype=float)
    tau = np.asarray(T, dtype=float) - np.asarray(t, dtype=float)
    with np.errstate(divide="ignore"):
        return np.where(xi > 0, 1.0 / (1.0 / np.where(xi > 0, xi, 1.0) + tau / M), 0.0)


@dataclass(frozen=True, eq=False)
class PdeGridSolution:
    times: np.ndarray  # saved time slices (ascending)
    x: np.ndarray
    v: np.ndarray  # (len(times), J)
    v0: np.ndarray  # slice at t = 0
    x0: float
    steps: int
    nodes: int
    boundary: str = "neumann-ghost"
    meta: dict = field(default_factory=dict)

    def value_at(self, x=None):
        x = self.x0 if x is None else x
        return float(np.interp(x, self.x, self.v0))


def _domain(spec, epsilon, margin):
    f = spec.factor
    x0 = float(f.x0[0])
    half = 6.0 * epsilon * f.sigma_bar() * np.sqrt(spec.horizon) + margin
    return x0 - half, x0 + half


def _coef_segments(spec, t_nodes):
    """Segment index per backward step so that time-only forms are cell constant."""
    forms = (spec.raw.M, spec.raw.lam, spec.eff.eta, spec.eff.gamma)
    brk = sorted({b for fm in forms for b in fm.breaks})
    mids = 0.5 * (t_nodes[:-1] + t_nodes[1:])
    seg_fwd = np.searchsorted(np.asarray(brk), mids, side="right")
    reps = np.concatenate([[0.0], brk, [spec.horizon]])
    rep_times = 0.5 * (reps[:-1] + reps[1:])
    return seg_fwd[::-1].astype(np.int64), rep_times


def _eval_x(form, t, x):
    P = x.size
    tt = np.full(P, t)
    v = form.value(tt) if form.time_only else form.value(tt, x[:, None])
    return v.reshape(P, -1)[:, 0]


def solve_pde_1d(spec, epsilon: float, nodes: int = 801, steps: int = 4000, margin: float = 1.0,
                 save_every: int = 0, backend: str | None = None) -> PdeGridSolution:
    """Backward march on an odd node count centred on the anchor ``x0``."""
    f = spec.factor
    if f is None or f.dim != 1:
        raise ConfigError("the PDE oracle handles exactly one factor")
    if nodes < 5 or nodes % 2 == 0:
        raise ValueError("nodes must be odd and >= 5")
    lo, hi = _domain(spec, epsilon, margin)
    x = np.linspace(lo, hi, nodes)
    dx = x[1] - x[0]
    T = spec.horizon
    dt = T / steps
    t_nodes = np.linspace(0.0, T, steps + 1)
    seg, rep_times = _coef_segments(spec, t_nodes)
    a = np.stack([1.0 / _eval_x(spec.raw.M, t, x) for t in rep_times])
    lam = np.stack([_eval_x(spec.raw.lam, t, x) for t in rep_times])
    eta = np.stack([_eval_x(spec.eff.eta, t, x) for t in rep_times])
    gam = np.stack([_eval_x(spec.eff.gamma, t, x) for t in rep_times])
    mu = np.broadcast_to(f.mu(x[:, None])[:, 0], a.shape).copy()
    sig = f.sigma(x[:, None])[:, 0, 0]
    diff = np.broadcast_to(0.5 * (epsilon * sig) ** 2, a.shape).copy()
    vT = _eval_x(spec.eff.xi, T, x)
    save = list(range(0, steps + 1, save_every)) if save_every else [0]
    if steps not in save:
        save.append(steps)
    march = kernels.get("pde_march", backend)
    try:
        v0, saved = march(vT, dx, dt, steps, seg, a, lam, eta, gam, mu, diff, save)
    except FloatingPointError as exc:
        raise NumericalError(f"PDE step failure: {exc}") from None
    if not np.all(np.isfinite(v0)):
        raise NumericalError("PDE solution overflowed")
    keys = sorted(saved, reverse=True)
    times = np.array([T - k * dt for k in keys])
    V = np.stack([saved[k] for k in keys])
    if np.min(V) < -1e-10:
        raise NumericalError(f"PDE solution lost nonnegativity (min {np.min(V):.3g})")
    x0 = float(f.x0[0])
    return PdeGridSolution(times=times, x=x, v=V, v0=v0, x0=x0, steps=steps, nodes=nodes,
                           meta={"epsilon": epsilon, "margin": margin, "dx": dx, "dt": dt})


@dataclass(frozen=True)
class PdeReference:
    value: float
    error_estimate: float
    raw_value: float  # single solve at the base grid
    self_difference: float  # base grid vs (steps*2, nodes*2-1)


def pde_reference(spec, epsilon: float, nodes: int = 801, steps: int = 4000, margin: float = 1.0,
                  backend: str | None = None) -> PdeReference:
    """Extrapolated anchored value v(0, x0) with an error estimate.

    Time: levels steps, 2*steps, 4*steps give a second-stage Richardson value
    (errors O(dt), O(dt^2) removed).  Space: the same on ``nodes`` and
    ``2*nodes - 1`` nodes, then a fourth-order space extrapolation.  The error
    estimate is the change caused by the last space and time stages.
    """
    f = spec.factor
    lo, hi = _domain(spec, epsilon, margin)
    if abs(f.x0[0] - lo) < 0.1 * (hi - lo) or abs(hi - f.x0[0]) < 0.1 * (hi - lo):
        warnings.warn("anchor within 10% of the truncation boundary", RuntimeWarning, stacklevel=2)

    def time_extrap(nx):
        v = [solve_pde_1d(spec, epsilon, nx, steps * m, margin, backend=backend).value_at()
             for m in (1, 2, 4)]
        r1 = [2 * v[1] - v[0], 2 * v[2] - v[1]]
        r2 = (4 * r1[1] - r1[0]) / 3.0
        return r2, abs(r2 - r1[1]), v

    a, ea, va = time_extrap(nodes)
    b, eb, vb = time_extrap(2 * nodes - 1)
    val = (4 * b - a) / 3.0
    err = abs(val - b) + max(ea, eb)
    sd = abs(vb[1] - va[0])
    return PdeReference(value=val, error_estimate=err, raw_value=va[0], self_difference=sd)
