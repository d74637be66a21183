"""Feedback strategies, all affine in the augmented state.

The simulation state inside a cell is ``y = (X, S_a, S_b)`` where ``S_a`` and
``S_b`` are the unaffected prices at the two cell ends (present only for a
stochastic price; the price is linear in between).  For a deterministic
price ``y = X``.  Every strategy is represented at the cell samples
theta = 0, 1/2, 1 by

    pi    = pi0 + Pi y,        delta = d0 + D y.

The optimal rule is

    pi*    = -M^-1 (V2 X + V1 + (S + M Theta)/2)
    delta* = -[V2 X + V1 + S/2]_i / ([V2]_ii + eta_i)

with ``V1 = A + Q (S - level)`` for an OU price.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

THETAS = np.array([0.0, 0.5, 1.0])


@dataclass(frozen=True)
class StrategyRule:
    """``kind`` is one of ``optimal``, ``zero``, ``perturbed``, ``custom``.

    ``perturbed``: ``pi = pi_scale*pi* + pi_shift``, ``delta = delta_scale*delta* + delta_shift``.
    ``custom``: constant affine tables ``pi0, Pi, d0, D`` in the position only.
    """

    kind: str = "optimal"
    pi_shift: tuple = ()
    delta_shift: tuple = ()
    pi_scale: float = 1.0
    delta_scale: float = 1.0
    tables: dict = field(default_factory=dict)
    label: str = ""

    @property
    def name(self):
        return self.label or self.kind


def optimal():
    return StrategyRule("optimal", label="optimal")


def zero():
    return StrategyRule("zero", label="zero")


def perturbed(pi_shift=0.0, delta_shift=0.0, scale=None, pi_scale=1.0, delta_scale=1.0, label=""):
    if scale is not None:
        pi_scale = delta_scale = scale
    return StrategyRule("perturbed", pi_shift=(pi_shift,) if np.isscalar(pi_shift) else tuple(pi_shift),
                        delta_shift=(delta_shift,) if np.isscalar(delta_shift) else tuple(delta_shift),
                        pi_scale=float(pi_scale), delta_scale=float(delta_scale), label=label)


def custom(pi0, Pi, d0, D, label="custom"):
    return StrategyRule("custom", tables={"pi0": pi0, "Pi": Pi, "d0": d0, "D": D}, label=label)


def perturbation_battery():
    """The six comparison strategies: pi or delta shifted by +-0.1 and both scaled by 1.2 and 0.8."""
    return [
        perturbed(pi_shift=0.1, label="pi+0.1"),
        perturbed(pi_shift=-0.1, label="pi-0.1"),
        perturbed(delta_shift=0.1, label="delta+0.1"),
        perturbed(delta_shift=-0.1, label="delta-0.1"),
        perturbed(scale=1.2, label="scale1.2"),
        perturbed(scale=0.8, label="scale0.8"),
    ]


@dataclass(frozen=True, eq=False)
class StateLayout:
    """Augmented state dimensions and the affine price representation."""

    n: int
    stochastic: bool

    @property
    def m(self):
        return 3 * self.n if self.stochastic else self.n

    def ex(self):
        e = np.zeros((self.n, self.m))
        e[:, :self.n] = np.eye(self.n)
        return e

    def price_affine(self, S_mean, thetas):
        """(s0, Sy) with ``S = s0 + Sy y``; shapes (N, k, n) and (k, n, m)."""
        n, m = self.n, self.m
        k = len(thetas)
        Sy = np.zeros((k, n, m))
        if not self.stochastic:
            return S_mean, Sy
        for j, th in enumerate(thetas):
            Sy[j, :, n:2 * n] = (1.0 - th) * np.eye(n)
            Sy[j, :, 2 * n:] = th * np.eye(n)
        return np.zeros_like(S_mean), Sy


def strategy_tables(rule: StrategyRule, sol, layout: StateLayout, price=None):
    """Affine coefficients at cell samples: pi0 (N,3,n), Pi (N,3,n,m), d0, D."""
    c = sol.cells
    N = c.grid.steps
    n, m = layout.n, layout.m
    if rule.kind == "zero":
        return (np.zeros((N, 3, n)), np.zeros((N, 3, n, m)), np.zeros((N, 3, n)), np.zeros((N, 3, n, m)))
    if rule.kind == "custom":
        t = rule.tables
        vec = lambda a: np.broadcast_to(np.asarray(a, dtype=float).reshape(-1), (N, 3, n)).copy()
        Pi = np.zeros((N, 3, n, m))
        D = np.zeros((N, 3, n, m))
        Pi[..., :n] = np.asarray(t["Pi"], dtype=float).reshape(n, n)
        D[..., :n] = np.asarray(t["D"], dtype=float).reshape(n, n)
        return vec(t["pi0"]), Pi, vec(t["d0"]), D

    V2 = sol.v2.cell_samples()
    A = sol.v1.cell_samples()
    Ex = layout.ex()
    s0, Sy = layout.price_affine(c.S, THETAS)
    if sol.v1.Q is not None:
        Qm = sol.v1.q_samples()
        a1 = A - np.einsum("kaij,j->kai", Qm, sol.v1.level)
    else:
        Qm = np.zeros_like(V2)
        a1 = A
    mv = lambda Mx, v: np.einsum("kaij,kaj->kai", Mx, v)
    u0 = a1 + mv(Qm, s0) + 0.5 * s0
    U = V2 @ Ex + np.einsum("kaij,ajm->kaim", Qm, Sy) + 0.5 * Sy[None]
    pi0 = -mv(c.Minv, u0 + 0.5 * mv(c.M, c.theta))
    Pi = -c.Minv @ U
    den = np.diagonal(V2, axis1=-2, axis2=-1) + c.eta
    d0 = -u0 / den
    D = -U / den[..., None]
    if rule.kind == "perturbed":
        ps = np.broadcast_to(np.asarray(rule.pi_shift or (0.0,), dtype=float), (n,))
        ds = np.broadcast_to(np.asarray(rule.delta_shift or (0.0,), dtype=float), (n,))
        pi0 = rule.pi_scale * pi0 + ps
        Pi = rule.pi_scale * Pi
        d0 = rule.delta_scale * d0 + ds
        D = rule.delta_scale * D
    elif rule.kind != "optimal":
        raise ValueError(f"unknown strategy kind '{rule.kind}'")
    return pi0, Pi, d0, D
