"""Markovian factor process ``dX = mu(X) ds + eps*sigma(X) dW`` driving coefficients.

Drift forms (componentwise, diagonal rates):

* ``ou``       mu_i = kappa_i (m_i - x_i)
* ``tanh_ou``  mu_i = kappa_i a_i tanh((m_i - x_i)/a_i)   (bounded)

Diffusion forms (diagonal):

* ``constant``        sigma_ii = s_i
* ``tanh_modulated``  sigma_ii = s_i (1 + r_i tanh(x_i - c_i)),  |r_i| < 1

All first and second derivatives are analytic.  Shapes for a state array
``x`` of shape ``P + (d,)``: ``mu -> P+(d,)``, ``dmu -> P+(d,d)`` with
``dmu[..., j, i] = d mu_j / d x_i``, ``d2mu -> P+(d,d,d)`` with
``d2mu[..., k, i, j] = d^2 mu_k / dx_i dx_j``; ``sigma -> P+(d,d)`` and
``dsigma[..., a, b, i] = d sigma_ab / d x_i``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..errors import ConfigError

DRIFTS = ("ou", "tanh_ou")
DIFFUSIONS = ("constant", "tanh_modulated")


def _vec(cfg, key, d, default=None):
    val = cfg.get(key, default)
    if val is None:
        raise ConfigError(f"factor.{key} is required")
    arr = np.asarray(val, dtype=float)
    if arr.ndim == 0:
        arr = np.full(d, float(arr))
    if arr.shape != (d,):
        raise ConfigError(f"factor.{key}: expected {d} values, got shape {arr.shape}")
    return arr


@dataclass(frozen=True, eq=False)
class FactorModel:
    dim: int
    drift: str
    kappa: np.ndarray
    mean: np.ndarray
    width: np.ndarray  # a_i for tanh_ou
    diffusion: str
    s: np.ndarray
    r: np.ndarray
    c: np.ndarray
    epsilon: float
    x0: np.ndarray

    @classmethod
    def from_config(cls, cfg) -> "FactorModel":
        d = int(cfg.get("dim", 1))
        if d < 1:
            raise ConfigError("factor.dim must be >= 1")
        drift = cfg.get("drift", "ou")
        diffusion = cfg.get("diffusion", "constant")
        if drift not in DRIFTS:
            raise ConfigError(f"unknown factor drift '{drift}'")
        if diffusion not in DIFFUSIONS:
            raise ConfigError(f"unknown factor diffusion '{diffusion}'")
        eps = float(cfg.get("epsilon", 1.0))
        if not 0.0 < eps <= 1.0:
            raise ConfigError("factor.epsilon must lie in (0, 1]")
        width = _vec(cfg, "width", d, 1.0)
        if np.any(width <= 0):
            raise ConfigError("factor.width must be positive")
        r = _vec(cfg, "r", d, 0.0)
        if np.any(np.abs(r) >= 1):
            raise ConfigError("factor.r must satisfy |r| < 1")
        return cls(dim=d, drift=drift, kappa=_vec(cfg, "kappa", d, 0.0), mean=_vec(cfg, "mean", d, 0.0),
                   width=width, diffusion=diffusion, s=_vec(cfg, "sigma", d, 1.0), r=r,
                   c=_vec(cfg, "c", d, 0.0), epsilon=eps, x0=_vec(cfg, "x0", d, 0.0))

    def to_dict(self):
        return {"dim": self.dim, "drift": self.drift, "kappa": self.kappa.tolist(),
                "mean": self.mean.tolist(), "width": self.width.tolist(),
                "diffusion": self.diffusion, "sigma": self.s.tolist(), "r": self.r.tolist(),
                "c": self.c.tolist(), "epsilon": self.epsilon, "x0": self.x0.tolist()}

    def with_epsilon(self, eps: float) -> "FactorModel":
        d = self.to_dict()
        d["epsilon"] = eps
        return FactorModel.from_config(d)

    # -- drift -------------------------------------------------------------
    def mu(self, x):
        x = np.asarray(x, dtype=float)
        if self.drift == "ou":
            return self.kappa * (self.mean - x)
        return self.kappa * self.width * np.tanh((self.mean - x) / self.width)

    def _mu_diag_derivs(self, x):
        x = np.asarray(x, dtype=float)
        if self.drift == "ou":
            return -self.kappa * np.ones_like(x), np.zeros_like(x)
        th = np.tanh((self.mean - x) / self.width)
        sech2 = 1.0 - th * th
        return -self.kappa * sech2, -2.0 * self.kappa * sech2 * th / self.width

    def dmu(self, x):
        d1, _ = self._mu_diag_derivs(x)
        return d1[..., :, None] * np.eye(self.dim)

    def d2mu(self, x):
        _, d2 = self._mu_diag_derivs(x)
        e = np.eye(self.dim)
        return d2[..., :, None, None] * (e[:, :, None] * e[:, None, :])

    # -- diffusion -----------------------------------------------------------
    def _sig_diag(self, x):
        x = np.asarray(x, dtype=float)
        if self.diffusion == "constant":
            return self.s * np.ones_like(x), np.zeros_like(x)
        th = np.tanh(x - self.c)
        return self.s * (1.0 + self.r * th), self.s * self.r * (1.0 - th * th)

    def sigma(self, x):
        v, _ = self._sig_diag(x)
        return v[..., :, None] * np.eye(self.dim)

    def dsigma(self, x):
        _, dv = self._sig_diag(x)
        e = np.eye(self.dim)
        return dv[..., :, None, None] * (e[:, :, None] * e[:, None, :])

    def sigma_bounds(self):
        """Uniform bounds (a1, a2) on the eigenvalues of sigma sigma^T."""
        r = np.abs(self.r) if self.diffusion == "tanh_modulated" else 0.0
        lo = np.abs(self.s) * (1.0 - r)
        hi = np.abs(self.s) * (1.0 + r)
        return float(np.min(lo) ** 2), float(np.max(hi) ** 2)

    def sigma_bar(self) -> float:
        return float(np.sqrt(self.sigma_bounds()[1]))
