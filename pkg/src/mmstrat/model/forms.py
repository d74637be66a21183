"""Closed registry of coefficient functional forms.

Every coefficient of the market model is a function ``c(t, x)`` of time and
of the factor state ``x`` (dimension ``d``).  Values may be scalars, vectors or
matrices; the form's ``shape`` records which.  Forms evaluate vectorised:

    value(t, x)  -> P + shape
    grad(t, x)   -> P + shape + (d,)
    hess(t, x)   -> P + shape + (d, d)

where ``t`` has shape ``P`` and ``x`` has shape ``P + (d,)`` (or is ``None``
for time-only forms).  Derivatives are analytic; nothing in the package
differentiates numerically.

Time-only forms are piecewise constant.  Their breakpoints must sit on grid
nodes, and inside a cell the value is the one in force on the open cell
("cell semantics").
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..errors import ConfigError

REGISTRY: dict[str, type] = {}


def register(cls):
    REGISTRY[cls.kind] = cls
    return cls


def _as_shape(value, shape, name):
    arr = np.asarray(value, dtype=float)
    if arr.shape == shape:
        return arr
    if arr.size == 1:
        return np.full(shape, float(arr.reshape(-1)[0]))
    raise ConfigError(f"{name}: expected shape {shape}, got {arr.shape}")


class Form:
    """Base class; subclasses set ``kind`` and implement the evaluators."""

    kind = "abstract"
    time_only = True
    shape: tuple = ()
    dim = 0

    def value(self, t, x=None):
        raise NotImplementedError

    def grad(self, t, x):
        t = np.asarray(t, dtype=float)
        return np.zeros(t.shape + self.shape + (self.dim,))

    def hess(self, t, x):
        t = np.asarray(t, dtype=float)
        return np.zeros(t.shape + self.shape + (self.dim, self.dim))

    @property
    def breaks(self) -> tuple:
        return ()

    def cell_values(self, grid, thetas=(0.0, 0.5, 1.0)):
        """Values at ``t_k + theta*h`` for each cell, shape (N, len(thetas)) + shape.

        Only for time-only forms.  Cell semantics: a cell takes the value in
        force at its midpoint, at every theta.
        """
        if not self.time_only:
            raise ConfigError(f"form {self.kind} depends on the factor state")
        mid = self.value(grid.cell_times(0.5))
        return np.repeat(mid[:, None], len(thetas), axis=1)

    def to_dict(self) -> dict:
        raise NotImplementedError


@register
@dataclass(frozen=True, eq=False)
class Constant(Form):
    kind = "constant"
    c: np.ndarray = field(default=None)
    shape: tuple = ()
    dim: int = 0

    @classmethod
    def from_config(cls, cfg, shape, dim):
        return cls(c=_as_shape(cfg["value"], shape, "constant.value"), shape=shape, dim=dim)

    def value(self, t, x=None):
        t = np.asarray(t, dtype=float)
        return np.broadcast_to(self.c, t.shape + self.shape).copy()

    def to_dict(self):
        return {"form": self.kind, "value": self.c.tolist()}


@register
@dataclass(frozen=True, eq=False)
class PiecewiseConstant(Form):
    """``values[j]`` holds on ``[breaks[j-1], breaks[j])``; right-continuous."""

    kind = "piecewise_constant"
    break_times: tuple = ()
    values: np.ndarray = field(default=None)
    shape: tuple = ()
    dim: int = 0

    @classmethod
    def from_config(cls, cfg, shape, dim):
        br = tuple(float(b) for b in cfg["breaks"])
        vals = [_as_shape(v, shape, "piecewise_constant.values") for v in cfg["values"]]
        if len(vals) != len(br) + 1:
            raise ConfigError("piecewise_constant needs len(values) == len(breaks) + 1")
        if any(b2 <= b1 for b1, b2 in zip(br, br[1:])):
            raise ConfigError("piecewise_constant breaks must be increasing")
        return cls(break_times=br, values=np.stack(vals), shape=shape, dim=dim)

    @property
    def breaks(self):
        return self.break_times

    def value(self, t, x=None):
        t = np.asarray(t, dtype=float)
        idx = np.searchsorted(np.asarray(self.break_times), t, side="right")
        return self.values[idx]

    def to_dict(self):
        return {"form": self.kind, "breaks": list(self.break_times), "values": self.values.tolist()}


def _expand(x, k):
    """Insert ``k`` singleton axes before the trailing factor axis of ``x``."""
    x = np.asarray(x, dtype=float)
    return x.reshape(x.shape[:-1] + (1,) * k + x.shape[-1:])


def _softplus(u):
    return np.logaddexp(0.0, u)


def _sigmoid(u):
    return 0.5 * (1.0 + np.tanh(0.5 * u))


@register
@dataclass(frozen=True, eq=False)
class SoftplusAffine(Form):
    """``floor + scale*softplus(a + b.x)``: smooth, bounded below by ``floor``."""

    kind = "softplus_affine"
    time_only = False
    floor: np.ndarray = field(default=None)
    scale: np.ndarray = field(default=None)
    a: np.ndarray = field(default=None)
    b: np.ndarray = field(default=None)
    shape: tuple = ()
    dim: int = 1

    @classmethod
    def from_config(cls, cfg, shape, dim):
        b = np.asarray(cfg["b"], dtype=float).reshape(shape + (dim,))
        return cls(
            floor=_as_shape(cfg.get("floor", 0.0), shape, "softplus_affine.floor"),
            scale=_as_shape(cfg.get("scale", 1.0), shape, "softplus_affine.scale"),
            a=_as_shape(cfg.get("a", 0.0), shape, "softplus_affine.a"),
            b=b, shape=shape, dim=dim,
        )

    def _u(self, x):
        return self.a + np.einsum("...d,...d->...", self.b, _expand(x, len(self.shape)))

    def value(self, t, x=None):
        return self.floor + self.scale * _softplus(self._u(x))

    def grad(self, t, x):
        s = _sigmoid(self._u(x))
        return (self.scale * s)[..., None] * self.b

    def hess(self, t, x):
        s = _sigmoid(self._u(x))
        ds = s * (1.0 - s)
        return (self.scale * ds)[..., None, None] * self.b[..., :, None] * self.b[..., None, :]

    def to_dict(self):
        return {"form": self.kind, "floor": self.floor.tolist(), "scale": self.scale.tolist(),
                "a": self.a.tolist(), "b": self.b.tolist()}


@register
@dataclass(frozen=True, eq=False)
class ExpFactor(Form):
    """``c0*exp(k.x)``: a positive coefficient driven by an OU-type factor."""

    kind = "exp_factor"
    time_only = False
    c0: np.ndarray = field(default=None)
    k: np.ndarray = field(default=None)
    shape: tuple = ()
    dim: int = 1

    @classmethod
    def from_config(cls, cfg, shape, dim):
        k = np.asarray(cfg["k"], dtype=float).reshape(shape + (dim,))
        return cls(c0=_as_shape(cfg["c0"], shape, "exp_factor.c0"), k=k, shape=shape, dim=dim)

    def value(self, t, x=None):
        u = np.einsum("...d,...d->...", self.k, _expand(x, len(self.shape)))
        return self.c0 * np.exp(u)

    def grad(self, t, x):
        return self.value(t, x)[..., None] * self.k

    def hess(self, t, x):
        return self.value(t, x)[..., None, None] * self.k[..., :, None] * self.k[..., None, :]

    def to_dict(self):
        return {"form": self.kind, "c0": self.c0.tolist(), "k": self.k.tolist()}


@dataclass(frozen=True, eq=False)
class Offset(Form):
    """``base + offset`` with a constant offset; used for the shifted parameters."""

    base: Form = None
    offset: np.ndarray = None

    @property
    def kind(self):
        return self.base.kind

    @property
    def time_only(self):
        return self.base.time_only

    @property
    def shape(self):
        return self.base.shape

    @property
    def dim(self):
        return self.base.dim

    @property
    def breaks(self):
        return self.base.breaks

    def value(self, t, x=None):
        return self.base.value(t, x) + self.offset

    def grad(self, t, x):
        return self.base.grad(t, x)

    def hess(self, t, x):
        return self.base.hess(t, x)

    def to_dict(self):
        return {"offset": self.offset.tolist(), **self.base.to_dict()}


def build_form(cfg, shape: tuple, dim: int, name: str = "coefficient") -> Form:
    """Build a registered form from a config entry.

    A bare number or nested list is shorthand for ``{form = "constant"}``.
    """
    if not isinstance(cfg, dict):
        cfg = {"form": "constant", "value": cfg}
    kind = cfg.get("form", "constant")
    if kind not in REGISTRY:
        raise ConfigError(f"{name}: unknown functional form id '{kind}' "
                          f"(registered: {', '.join(sorted(REGISTRY))})")
    cls = REGISTRY[kind]
    if not cls.time_only and dim == 0:
        raise ConfigError(f"{name}: form '{kind}' needs a factor model")
    try:
        return cls.from_config(cfg, tuple(shape), dim)
    except KeyError as exc:
        raise ConfigError(f"{name}: missing key {exc} for form '{kind}'") from None
    except ValueError as exc:
        raise ConfigError(f"{name}: {exc}") from None
