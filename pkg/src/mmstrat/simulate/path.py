"""Single-path records and the explicit single-security position formula."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .events import BLOCK, sample_block
from .maps import J_TERMS, RAW_TERMS, jump_coeffs, partial_map

_GL = np.polynomial.legendre.leggauss(16)


@dataclass(eq=False)
class PathRecord:
    """Event log and grid path of one simulated path.

    ``events`` rows are ``(time, kind, security, size, X_after)`` where kind
    is ``customer``, ``fill`` or ``grid`` and size is the mark ``z`` or the
    executed dark-pool quantity.
    """

    times: np.ndarray  # grid nodes
    X: np.ndarray  # (N+1, n) position at grid nodes
    impacted_price: np.ndarray  # (N+1, n) S~ at grid nodes (right limit of the strategy)
    events: list
    terms: dict  # cost accumulators per term
    int_pi: np.ndarray
    marks: np.ndarray  # sum of customer marks per security
    fills: np.ndarray  # sum of executed dark-pool quantities per security

    def bookkeeping_error(self, x0):
        """|X_T - (x + sum marks + int pi + sum delta)|, max over securities."""
        return float(np.max(np.abs(self.X[-1] - (x0 + self.marks + self.int_pi + self.fills))))


def simulate_path(sim, rule, seed: int, path: int = 0, x0=None) -> PathRecord:
    """Replay path ``path`` of ``seed`` event by event (deterministic price only)."""
    if sim.price.stochastic:
        raise ValueError("simulate_path replays deterministic-price models only")
    spec, grid = sim.spec, sim.grid
    tab = sim.tables(rule)
    n = spec.n
    x = np.array(spec.x0 if x0 is None else np.broadcast_to(x0, (n,)), dtype=float)
    blk = sample_block(spec, grid, seed, path // BLOCK)
    evs = blk.for_path(path % BLOCK)
    N = grid.steps
    Q = tab.q0.shape[2]
    acc = np.zeros(Q)
    X = x.copy()
    Xg = np.zeros((N + 1, n))
    St = np.zeros((N + 1, n))
    Xg[0] = X
    spread = dark = 0.0
    marks = np.zeros(n)
    fills = np.zeros(n)
    log = []
    j = 0

    def advance(k, ta, tb):
        nonlocal X
        g0, g1, c0, c1, c2 = partial_map(tab, np.array([k]), np.array([ta]), np.array([tb]))
        acc[:] += c0[0] + c1[0] @ X + X @ c2[0] @ X
        X = g0[0] + g1[0] @ X

    for k in range(N):
        j0, j1 = jump_coeffs(tab, np.array([k]), np.array([0.0]))
        St[k] = j0[0, 0] + j1[0, 0] @ X
        ta = 0.0
        while j < len(evs) and min(int(evs[j][0] / grid.h), N - 1) == k:
            t, kind, i, z = evs[j]
            th = (t - grid.times[k]) / grid.h
            advance(k, ta, th)
            j0, j1 = jump_coeffs(tab, np.array([k]), np.array([th]))
            rows = j0[0] + j1[0] @ X
            if kind == 0:
                spread += rows[0, i] * (1.0 - np.sign(z) * tab.b[k, i]) * z
                marks[i] += z
                X[i] += z
                log.append((t, "customer", i, z, X.copy()))
            else:
                d = rows[2, i]
                dark += rows[1, i] * d + tab.eta_tilde[k, i] * d * d
                fills[i] += d
                X[i] += d
                log.append((t, "fill", i, d, X.copy()))
            ta = th
            j += 1
        advance(k, ta, 1.0)
        Xg[k + 1] = X
        log.append((grid.times[k + 1], "grid", -1, 0.0, X.copy()))
    j0, j1 = jump_coeffs(tab, np.array([N - 1]), np.array([1.0]))
    St[N] = j0[0, 0] + j1[0, 0] @ X
    names = J_TERMS + RAW_TERMS
    terms = {k: float(acc[i]) for i, k in enumerate(names)}
    terms["pen"] += float(X @ tab.xi @ X)
    terms["rpen"] += float(X @ tab.xi_tilde @ X)
    terms["spread"] = float(spread)
    terms["darkraw"] = float(dark)
    base = len(names)
    return PathRecord(times=grid.times.copy(), X=Xg, impacted_price=St, events=log, terms=terms,
                      int_pi=acc[base:base + n].copy(), marks=marks, fills=fills)


# -- explicit single-security representation ---------------------------------------

def _gl_nodes(a, b):
    x, w = _GL
    return 0.5 * (b - a) * x + 0.5 * (b + a), 0.5 * (b - a) * w


def reconstruct_position(sol, events, x0: float):
    """Terminal position of the optimal strategy from the explicit formula.

    With ``r = V2/M`` and ``g = -(V1 + S/2)/M - Theta/2`` the position solves
    ``dX = (g - r X) ds`` between events, hence

        X_T = e^{-R(T)} [x + int_0^T e^{R(s)} g(s) ds + sum_tau e^{R(tau)} jump_tau],

    ``R(s) = int_0^s r``.  Customer jumps are the marks; fills execute
    ``delta*(tau, X_tau-)``.  Integrals use Gauss-Legendre rules on the
    Hermite-interpolated coefficient paths, independently of the simulator.
    Returns ``(X_T, [X_tau- per event])``.
    """
    c = sol.cells
    if c.n != 1:
        raise ValueError("the explicit representation is for a single security")
    grid = c.grid
    N, h = grid.steps, grid.h
    S0 = c.S[..., 0]

    def lag(arr, k, th):
        w0, w1, w2 = 2 * (th - .5) * (th - 1), -4 * th * (th - 1), 2 * th * (th - .5)
        return w0 * arr[k, 0] + w1 * arr[k, 1] + w2 * arr[k, 2]

    def coeffs(k, t):
        th = (t - grid.times[k]) / h
        M = lag(c.M[..., 0, 0], k, th)
        V2 = sol.v2.at(t)[..., 0, 0]
        V1 = sol.v1.at(t)[..., 0]
        return V2, V1, M, lag(S0, k, th), lag(c.theta[..., 0], k, th), lag(c.eta[..., 0], k, th)

    def rate(k, t):
        V2, _, M, *_ = coeffs(k, t)
        return V2 / M

    def src(k, t):
        _, V1, M, S, Th, _ = coeffs(k, t)
        return -(V1 + 0.5 * S) / M - 0.5 * Th

    def R_piece(k, a, b):
        s, w = _gl_nodes(a, b)
        return float(np.sum(w * rate(k, s)))

    def G_piece(k, a, b, Ra):
        # int_a^b e^{R(s)} g(s) ds with R(s) = Ra + int_a^s r
        s, w = _gl_nodes(a, b)
        Rs = np.array([Ra + R_piece(k, a, si) for si in s])
        return float(np.sum(w * np.exp(Rs) * src(k, s)))

    # whole-cell pieces, then splice events in
    ev = sorted(events)
    R = 0.0
    acc = float(x0)
    pre = []
    j = 0
    for k in range(N):
        a = grid.times[k]
        b_end = grid.times[k + 1]
        while j < len(ev) and min(int(ev[j][0] / h), N - 1) == k:
            t, kind, _, z = ev[j]
            acc += G_piece(k, a, t, R)
            R += R_piece(k, a, t)
            x_minus = np.exp(-R) * acc
            pre.append(x_minus)
            if kind == 0:
                jump = z
            else:
                V2, V1, _, S, _, eta = coeffs(k, t)
                jump = -(V2 * x_minus + V1 + 0.5 * S) / (V2 + eta)
            acc += np.exp(R) * jump
            a = t
            j += 1
        acc += G_piece(k, a, b_end, R)
        R += R_piece(k, a, b_end)
    return float(np.exp(-R) * acc), pre


def deterministic_decay(sol, x0: float):
    """``x exp(-int_0^T r)`` with ``r = (1/M + lambda/(V2+eta)) V2``; the terminal
    position without flow when fills are compensated."""
    c = sol.cells
    grid = c.grid
    total = 0.0
    for k in range(grid.steps):
        s, w = _gl_nodes(grid.times[k], grid.times[k + 1])
        th = (s - grid.times[k]) / grid.h
        w0, w1, w2 = 2 * (th - .5) * (th - 1), -4 * th * (th - 1), 2 * th * (th - .5)
        lag = lambda arr: w0 * arr[k, 0] + w1 * arr[k, 1] + w2 * arr[k, 2]
        V2 = sol.v2.at(s)[..., 0, 0]
        r = (1.0 / lag(c.M[..., 0, 0]) + lag(c.lam[..., 0]) / (V2 + lag(c.eta[..., 0]))) * V2
        total += float(np.sum(w * r))
    return float(x0 * np.exp(-total))
