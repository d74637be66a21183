"""Linear-quadratic cell maps.

Between events the position follows ``dX/ds = pi0(s) + Pi(s) y`` with ``y`` the
augmented state at the start of the interval (prices are frozen in ``y``).
Hence ``X(s) = g0(s) + g1(s) y`` and every running-cost rate
``q(s, y) = q0 + q1.y + y'q2 y`` integrates to ``c0 + c1.y + y'c2 y``.  The
coefficients solve linear ODEs integrated by RK4 from the samples at the
start, middle and end of the interval; partial intervals (around events)
read those samples by quadratic Lagrange interpolation within the cell.

Running-cost rows (``Q = 9 + 2n``):

    J form  : pen  X'gamma X | flow X'(beta(b Psi) - l) | impact pi'M pi |
              linpi (S + M Theta)'pi | dark sum lambda(eta delta^2 + S delta) |
              const S'Theta + sum beta_ii Phi2_i / 2
    raw form: rpen X'gamma~ X | exch (S + M pi - beta X)'pi | repo -l'X
    per security: int pi_i, int lambda_i delta_i
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..grid import lagrange3
from .strategy import THETAS, StateLayout, strategy_tables

J_TERMS = ("pen", "flow", "impact", "linpi", "dark", "const")
RAW_TERMS = ("rpen", "exch", "repo")


def n_rows(n):
    return len(J_TERMS) + len(RAW_TERMS) + 2 * n


def _quad(a0, A, W, b0, B):
    """(a0 + A y)' W (b0 + B y) -> (q0, q1, q2) with q2 symmetric."""
    Wb0 = np.einsum("...ij,...j->...i", W, b0)
    WtA0 = np.einsum("...ji,...j->...i", W, a0)
    q0 = np.einsum("...i,...i->...", a0, Wb0)
    q1 = np.einsum("...im,...i->...m", A, Wb0) + np.einsum("...im,...i->...m", B, WtA0)
    q2 = np.einsum("...im,...ij,...jl->...ml", A, W, B)
    return q0, q1, 0.5 * (q2 + np.swapaxes(q2, -1, -2))


def _lin(w, a0, A):
    return (np.einsum("...i,...i->...", w, a0), np.einsum("...i,...im->...m", w, A))


def _diag(v):
    return v[..., :, None] * np.eye(v.shape[-1])


@dataclass(frozen=True, eq=False)
class SimTables:
    layout: StateLayout
    h: float
    pi0: np.ndarray  # (N, 3, n)
    Pi: np.ndarray  # (N, 3, n, m)
    q0: np.ndarray  # (N, 3, Q)
    q1: np.ndarray  # (N, 3, Q, m)
    q2: np.ndarray  # (N, 3, Q, m, m)
    jump0: np.ndarray  # (N, 3, 3, n): rows S~ (impacted price), S - beta X, delta
    jump1: np.ndarray  # (N, 3, 3, n, m)
    b: np.ndarray  # (N, n)
    eta_tilde: np.ndarray  # (N, n)
    xi: np.ndarray
    xi_tilde: np.ndarray
    lam: np.ndarray  # (N, n)
    phi: np.ndarray  # (N, n)
    full: tuple  # (g0, g1, c0, c1, c2) for every whole cell

    @property
    def N(self):
        return self.pi0.shape[0]


def build_tables(sol, rule, price=None) -> SimTables:
    c = sol.cells
    n = c.n
    stochastic = bool(price is not None and price.stochastic)
    layout = StateLayout(n=n, stochastic=stochastic)
    m = layout.m
    N = c.grid.steps
    pi0, Pi, d0, D = strategy_tables(rule, sol, layout, price)
    Ex = np.broadcast_to(layout.ex(), (N, 3, n, m))
    zx = np.zeros((N, 3, n))
    s0, Sy = layout.price_affine(c.S, THETAS)
    Sy = np.broadcast_to(Sy, (N, 3, n, m))
    bpsi = c.b * c.psi
    beta = np.broadcast_to(c.beta, (N, 3, n, n))
    eye = np.broadcast_to(np.eye(n), (N, 3, n, n))

    rows0, rows1, rows2 = [], [], []

    def add(q0, q1, q2=None):
        rows0.append(q0)
        rows1.append(q1)
        rows2.append(np.zeros((N, 3, m, m)) if q2 is None else q2)

    add(*_quad(zx, Ex, c.gamma, zx, Ex))
    add(*_lin(np.einsum("kaij,kaj->kai", beta, bpsi) - c.l, zx, Ex))
    add(*_quad(pi0, Pi, c.M, pi0, Pi))
    add(*_quad(s0 + np.einsum("kaij,kaj->kai", c.M, c.theta), Sy, eye, pi0, Pi))
    dq = _quad(d0, D, _diag(c.lam * c.eta), d0, D)
    ds = _quad(s0, Sy, _diag(c.lam), d0, D)
    add(dq[0] + ds[0], dq[1] + ds[1], dq[2] + ds[2])
    cq = _lin(c.theta, s0, Sy)
    add(cq[0] + 0.5 * np.einsum("i,kai->ka", np.diag(c.beta), c.phi2), cq[1])
    add(*_quad(zx, Ex, c.gamma_tilde, zx, Ex))
    st0 = s0 + np.einsum("kaij,kaj->kai", c.M, pi0)
    st1 = Sy + c.M @ Pi - beta @ Ex
    add(*_quad(st0, st1, eye, pi0, Pi))
    add(*_lin(-c.l, zx, Ex))
    for i in range(n):
        add(pi0[..., i], Pi[..., i, :])
    for i in range(n):
        add(c.lam[..., i] * d0[..., i], c.lam[..., i, None] * D[..., i, :])
    q0 = np.stack(rows0, axis=2)
    q1 = np.stack(rows1, axis=2)
    q2 = np.stack(rows2, axis=2)
    sd0, sd1 = s0, Sy - beta @ Ex
    jump0 = np.stack([st0, sd0, d0], axis=2)
    jump1 = np.stack([st1, sd1, D], axis=2)
    h = c.grid.h
    full = rk4_map(pi0, Pi, q0, q1, q2, np.full(N, h), layout)
    return SimTables(layout=layout, h=h, pi0=pi0, Pi=Pi, q0=q0, q1=q1, q2=q2, jump0=jump0, jump1=jump1,
                     b=c.b[:, 1], eta_tilde=c.eta_tilde[:, 1], xi=c.xi, xi_tilde=c.xi_tilde,
                     lam=c.lam[:, 1], phi=c.phi[:, 1], full=full)


def rk4_map(pi0, Pi, q0, q1, q2, L, layout: StateLayout):
    """One RK4 step of the map ODEs over intervals of length ``L`` (B,).

    Coefficient arrays carry (B, 3, ...) stage samples at the interval start,
    middle and end.  Returns (g0, g1, c0, c1, c2).
    """
    n, m = layout.n, layout.m
    B = L.shape[0]
    ES = np.zeros((m - n, m))
    ES[:, n:] = np.eye(m - n)

    def full_state(g0, g1):
        G0 = np.concatenate([g0, np.zeros((B, m - n))], axis=1)
        G1 = np.concatenate([g1, np.broadcast_to(ES, (B, m - n, m))], axis=1)
        return G0, G1

    def deriv(j, g0, g1):
        G0, G1 = full_state(g0, g1)
        dg0 = pi0[:, j] + np.einsum("bim,bm->bi", Pi[:, j], G0)
        dg1 = Pi[:, j] @ G1
        Q2 = q2[:, j]
        Q2G0 = np.einsum("bqml,bl->bqm", Q2, G0)
        dc0 = q0[:, j] + np.einsum("bqm,bm->bq", q1[:, j], G0) + np.einsum("bm,bqm->bq", G0, Q2G0)
        dc1 = np.einsum("blm,bql->bqm", G1, q1[:, j] + 2.0 * Q2G0)
        dc2 = np.einsum("zam,zqab,zbl->zqml", G1, Q2, G1)
        return dg0, dg1, dc0, dc1, dc2

    g0 = np.zeros((B, n))
    g1 = np.broadcast_to(layout.ex(), (B, n, m)).copy()
    Lc = L[:, None]
    Lm = L[:, None, None]
    k1 = deriv(0, g0, g1)
    k2 = deriv(1, g0 + 0.5 * Lc * k1[0], g1 + 0.5 * Lm * k1[1])
    k3 = deriv(1, g0 + 0.5 * Lc * k2[0], g1 + 0.5 * Lm * k2[1])
    k4 = deriv(2, g0 + Lc * k3[0], g1 + Lm * k3[1])

    def comb(i, base, Ls):
        return base + Ls / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i])

    g0n = comb(0, g0, Lc)
    g1n = comb(1, g1, Lm)
    c0 = comb(2, 0.0, Lc)
    c1 = comb(3, 0.0, Lm)
    c2 = comb(4, 0.0, L[:, None, None, None])
    return g0n, g1n, c0, c1, 0.5 * (c2 + np.swapaxes(c2, -1, -2))


def stage_samples(arr, k, ta, tb):
    """Lagrange-interpolated samples of ``arr[k]`` at ta, (ta+tb)/2, tb; (B, 3, ...)."""
    th = np.stack([ta, 0.5 * (ta + tb), tb], axis=1)  # (B, 3)
    w = lagrange3(th)  # (B, 3, 3)
    src = arr[k]  # (B, 3, ...)
    return np.einsum("bsj,bj...->bs...", w, src)


def partial_map(tab: SimTables, k, ta, tb):
    """Map over [t_k + ta h, t_k + tb h] for arrays of cells ``k`` and fractions."""
    L = (tb - ta) * tab.h
    return rk4_map(stage_samples(tab.pi0, k, ta, tb), stage_samples(tab.Pi, k, ta, tb),
                   stage_samples(tab.q0, k, ta, tb), stage_samples(tab.q1, k, ta, tb),
                   stage_samples(tab.q2, k, ta, tb), L, tab.layout)


def jump_coeffs(tab: SimTables, k, th):
    """Interpolated jump rows at fraction ``th`` of cell ``k``: (B, 3, n), (B, 3, n, m)."""
    w = lagrange3(th)  # (B, 3)
    return (np.einsum("bj,bj...->b...", w, tab.jump0[k]), np.einsum("bj,bj...->b...", w, tab.jump1[k]))
