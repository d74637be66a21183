"""Customer order flow: intensity densities over signed order sizes.

The compensator density factorises as ``Lambda(t, z) = nu(t) * p(z)``, where
``nu`` is a time-only rate form (orders per unit time) and ``p`` is a
probability density on the mark support ``K``.  ``K`` is a union of closed
intervals, none of which straddles zero (an interval may end at zero; the
single point carries no mass).

Shapes of ``p`` on each side of zero:

* ``uniform``      p ∝ 1
* ``power``        p ∝ |z|**power
* ``exponential``  p ∝ exp(-|z|/scale)

``buy_fraction`` optionally fixes the probability mass on ``z > 0``; otherwise
the shape is normalised over all of ``K``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..errors import ConfigError, NumericalError
from .forms import Form, build_form

SHAPES = ("uniform", "power", "exponential")
_GL64 = np.polynomial.legendre.leggauss(64)
_GL32 = np.polynomial.legendre.leggauss(32)


def _gauss(fn, a, b, rule):
    x, w = rule
    z = 0.5 * (b - a) * x + 0.5 * (b + a)
    return 0.5 * (b - a) * np.sum(w * fn(z))


@dataclass(frozen=True)
class FlowMoments:
    """Order-size moment rates (per unit time) and the spread-adjusted flow."""

    phi: np.ndarray
    psi: np.ndarray
    phi2: np.ndarray
    theta: np.ndarray

    @classmethod
    def from_parts(cls, phi, psi, phi2, b):
        phi, psi, phi2 = (np.asarray(v, dtype=float) for v in (phi, psi, phi2))
        return cls(phi=phi, psi=psi, phi2=phi2, theta=phi - np.asarray(b, dtype=float) * psi)


@dataclass(frozen=True, eq=False)
class OrderFlowSpec:
    """Order flow of one security."""

    support: tuple  # ((a, b), ...) with a < b and no interval straddling 0
    shape: str
    rate: Form
    power: float = 0.0
    scale: float = 1.0
    buy_fraction: float | None = None

    def __post_init__(self):
        if self.shape not in SHAPES:
            raise ConfigError(f"unknown order-size shape '{self.shape}'")
        if not self.support:
            raise ConfigError("mark support must be non-empty")
        for a, b in self.support:
            if not a < b:
                raise ConfigError(f"mark support interval [{a}, {b}] is empty")
            if a < 0.0 < b:
                raise ConfigError("mark support must exclude zero "
                                  f"(interval [{a}, {b}] contains 0)")
        if self.shape == "exponential" and not self.scale > 0:
            raise ConfigError("exponential order-size shape needs scale > 0")
        if self.buy_fraction is not None:
            q = self.buy_fraction
            if not 0.0 <= q <= 1.0:
                raise ConfigError("buy_fraction must lie in [0, 1]")
            if q > 0 and not self._side(+1):
                raise ConfigError("buy_fraction > 0 but the support has no positive marks")
            if q < 1 and not self._side(-1):
                raise ConfigError("buy_fraction < 1 but the support has no negative marks")
        if not self.rate.time_only:
            raise ConfigError("order-flow rate must be a time-only form")
        object.__setattr__(self, "_tables", self._build_tables())

    @classmethod
    def from_config(cls, cfg: dict) -> "OrderFlowSpec":
        try:
            support = tuple((float(a), float(b)) for a, b in cfg["support"])
        except KeyError:
            raise ConfigError("order flow needs a 'support' list of [a, b] intervals") from None
        return cls(
            support=support,
            shape=cfg.get("shape", "uniform"),
            rate=build_form(cfg.get("rate", 0.0), (), 0, "flow.rate"),
            power=float(cfg.get("power", 0.0)),
            scale=float(cfg.get("scale", 1.0)),
            buy_fraction=None if cfg.get("buy_fraction") is None else float(cfg["buy_fraction"]),
        )

    def to_dict(self):
        out = {"support": [list(iv) for iv in self.support], "shape": self.shape,
               "rate": self.rate.to_dict(), "power": self.power, "scale": self.scale}
        if self.buy_fraction is not None:
            out["buy_fraction"] = self.buy_fraction
        return out

    # -- unnormalised shape ---------------------------------------------
    def _side(self, sign):
        return [iv for iv in self.support if (iv[0] >= 0.0 if sign > 0 else iv[1] <= 0.0)]

    def _kernel(self, z):
        az = np.abs(z)
        if self.shape == "uniform":
            return np.ones_like(az)
        if self.shape == "power":
            return az ** self.power
        return np.exp(-az / self.scale)

    def _mass(self, a, b):
        """Exact integral of the unnormalised kernel over [a, b] (same sign)."""
        lo, hi = sorted((abs(a), abs(b)))
        if self.shape == "uniform":
            return hi - lo
        if self.shape == "power":
            p1 = self.power + 1.0
            return (hi ** p1 - lo ** p1) / p1
        s = self.scale
        return s * (np.exp(-lo / s) - np.exp(-hi / s))

    def _build_tables(self):
        masses = np.array([self._mass(a, b) for a, b in self.support])
        if np.any(masses <= 0) or not np.all(np.isfinite(masses)):
            raise ConfigError("order-size density has zero or infinite mass on an interval")
        if self.buy_fraction is None:
            probs = masses / masses.sum()
        else:
            # intervals [a, 0] count as negative; [0, b] as positive
            pos = np.array([a >= 0.0 and b > 0.0 for a, b in self.support])
            probs = np.zeros_like(masses)
            q = self.buy_fraction
            if pos.any():
                probs[pos] = q * masses[pos] / masses[pos].sum()
            if (~pos).any():
                probs[~pos] = (1 - q) * masses[~pos] / masses[~pos].sum()
        weights = probs / masses  # density = weights[j] * kernel on interval j
        return {"masses": masses, "probs": probs, "weights": weights,
                "cum": np.cumsum(probs)}

    # -- public API -------------------------------------------------------
    def density(self, z):
        """Normalised mark density p(z); zero off the support."""
        z = np.asarray(z, dtype=float)
        out = np.zeros_like(z)
        for (a, b), w in zip(self.support, self._tables["weights"]):
            inside = (z >= a) & (z <= b) & (z != 0.0)
            out = np.where(inside, w * self._kernel(z), out)
        return out

    def unit_moments(self, rule=_GL64):
        """(E z, E|z|, E z^2) under p, by Gauss-Legendre on each interval."""
        m = np.zeros(3)
        for (a, b), w in zip(self.support, self._tables["weights"]):
            for j, fn in enumerate((lambda z: z, np.abs, np.square)):
                m[j] += w * _gauss(lambda z: fn(z) * self._kernel(z), a, b, rule)
        return m

    @property
    def max_abs_mark(self):
        return max(max(abs(a), abs(b)) for a, b in self.support)

    def sample_marks(self, u_pick, u_val):
        """Inverse-CDF marks from two arrays of uniforms in [0, 1)."""
        u_pick = np.asarray(u_pick, dtype=float)
        u_val = np.asarray(u_val, dtype=float)
        j = np.minimum(np.searchsorted(self._tables["cum"], u_pick, side="right"),
                       len(self.support) - 1)
        a = np.array([iv[0] for iv in self.support])[j]
        b = np.array([iv[1] for iv in self.support])[j]
        neg = b <= 0.0
        lo = np.where(neg, -b, a)
        hi = np.where(neg, -a, b)
        if self.shape == "uniform":
            mag = lo + u_val * (hi - lo)
        elif self.shape == "power":
            p1 = self.power + 1.0
            mag = (lo ** p1 + u_val * (hi ** p1 - lo ** p1)) ** (1.0 / p1)
        else:
            s = self.scale
            e_lo, e_hi = np.exp(-lo / s), np.exp(-hi / s)
            mag = -s * np.log(e_lo - u_val * (e_lo - e_hi))
        mag = np.clip(mag, lo, hi)
        return np.where(neg, -mag, mag)


def check_quadrature(spec: OrderFlowSpec, rtol=1e-10):
    """Compare 64- and 32-node rules; disagreement means a pathological density."""
    m64 = spec.unit_moments(_GL64)
    m32 = spec.unit_moments(_GL32)
    scale = np.maximum(np.abs(m64), 1e-300)
    if np.any(np.abs(m64 - m32) > rtol * scale + 1e-14):
        raise NumericalError("order-size moment quadrature did not converge")
    return m64


def flow_moments(specs, b, t) -> FlowMoments:
    """Moment rates (Phi, Psi, Phi2) and Theta for every security at time(s) ``t``.

    ``specs`` is a sequence of per-security :class:`OrderFlowSpec`; ``b`` the
    proportional spreads (same length, or broadcastable against ``t``).
    Output arrays have shape ``t.shape + (n,)``.
    """
    t = np.asarray(t, dtype=float)
    unit = np.stack([check_quadrature(s) for s in specs])  # (n, 3)
    rate = np.stack([s.rate.value(t) for s in specs], axis=-1)  # P + (n,)
    return FlowMoments.from_parts(rate * unit[:, 0], rate * unit[:, 1], rate * unit[:, 2], b)
