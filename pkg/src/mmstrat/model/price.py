"""Unaffected price models.

``deterministic``: ``S_t`` is a time-only form (vector of n prices).
``ou``: independent per-security Ornstein-Uhlenbeck prices
``dS = kappa*(theta - S) dt + sigma dW`` started at ``s0``; ``kappa = 0``
gives arithmetic Brownian motion.

Expectation curves ``E[S_u | F_s]`` are analytic for both models, which is
what the affine solver consumes.  For the OU model the value-function slope
splits as ``V1(s) = A(s) + Q(s)(S_s - theta)`` with deterministic ``A`` and
``Q``; see :mod:`mmstrat.affine`.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.signal import lfilter

from ..errors import ConfigError
from .forms import Form, build_form


@dataclass(frozen=True, eq=False)
class PriceModel:
    kind: str
    n: int
    level: Form | None = None  # deterministic model
    s0: np.ndarray | None = None
    theta: np.ndarray | None = None
    kappa: np.ndarray | None = None
    sigma: np.ndarray | None = None

    @classmethod
    def from_config(cls, cfg, n: int) -> "PriceModel":
        if not isinstance(cfg, dict) or "model" not in cfg:
            return cls(kind="deterministic", n=n, level=build_form(cfg, (n,), 0, "price"),
                       sigma=np.zeros(n))
        kind = cfg["model"]
        vec = lambda key, default=None: _vector(cfg.get(key, default), n, f"price.{key}")
        if kind == "deterministic":
            return cls(kind=kind, n=n, level=build_form(cfg.get("level", 0.0), (n,), 0, "price.level"),
                       sigma=vec("sigma", 0.0))
        if kind == "ou":
            s0 = vec("s0")
            kappa = vec("kappa", 0.0)
            if np.any(kappa < 0):
                raise ConfigError("price.kappa must be non-negative")
            theta = vec("theta", None) if cfg.get("theta") is not None else s0.copy()
            return cls(kind=kind, n=n, s0=s0, theta=theta, kappa=kappa, sigma=vec("sigma", 0.0))
        raise ConfigError(f"unknown price model '{kind}'")

    def to_dict(self):
        if self.kind == "deterministic":
            return {"model": "deterministic", "level": self.level.to_dict(), "sigma": self.sigma.tolist()}
        return {"model": "ou", "s0": self.s0.tolist(), "theta": self.theta.tolist(),
                "kappa": self.kappa.tolist(), "sigma": self.sigma.tolist()}

    @property
    def stochastic(self) -> bool:
        return self.kind == "ou" and bool(np.any(self.sigma != 0))

    @property
    def anchor(self) -> np.ndarray:
        """Level ``theta`` used in the split ``V1 = A + Q(S - theta)``."""
        if self.kind != "ou":
            raise ConfigError("anchor level only exists for the OU price model")
        return np.where(self.kappa > 0, self.theta, self.s0)

    def mean(self, t):
        """``E[S_t]`` seen from time 0; shape ``t.shape + (n,)``."""
        t = np.asarray(t, dtype=float)
        if self.kind == "deterministic":
            return self.level.value(t)
        decay = np.exp(-self.kappa * t[..., None])
        return self.theta + (self.s0 - self.theta) * decay

    def mean_cells(self, grid):
        """Expectation curve at cell samples (N, 3, n), cell semantics for forms."""
        if self.kind == "deterministic":
            return self.level.cell_values(grid)
        th = np.array([0.0, 0.5, 1.0])
        return self.mean(grid.times[:-1, None] + th * grid.h)

    def sample(self, dt, normals):
        """Exact OU transitions on a uniform time grid of step ``dt``.

        ``normals`` has shape ``P + (steps, n)``; the result has shape
        ``P + (steps + 1, n)`` and starts at ``s0``.
        """
        normals = np.asarray(normals, dtype=float)
        lead = normals.shape[:-2]
        if self.kind == "deterministic":
            raise ConfigError("deterministic prices are not sampled")
        k = self.kappa
        decay = np.exp(-k * dt)
        safe = np.where(k > 0, k, 1.0)
        var = np.where(k > 0, -np.expm1(-2.0 * k * dt) / (2.0 * safe), dt)
        shocks = self.sigma * np.sqrt(var) * normals
        # deviation from theta follows y_{j+1} = decay*y_j + shock_j
        y0 = np.broadcast_to(self.s0 - self.theta, lead + (self.n,))
        inp = np.concatenate([y0[..., None, :], shocks], axis=-2)
        out = np.empty_like(inp)
        for i in range(self.n):
            out[..., i] = lfilter([1.0], [1.0, -decay[i]], inp[..., i], axis=-1)
        return out + self.theta


def _vector(value, n, name):
    if value is None:
        raise ConfigError(f"{name} is required")
    arr = np.asarray(value, dtype=float)
    if arr.ndim == 0:
        arr = np.full(n, float(arr))
    if arr.shape != (n,):
        raise ConfigError(f"{name}: expected {n} values, got shape {arr.shape}")
    return arr
