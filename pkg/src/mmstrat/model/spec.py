"""Model specification: raw and shifted parameters, flows, price, factor.

``build_model`` turns a parsed configuration tree into an immutable
:class:`ModelSpec` and runs the standing-assumption checks.  The inventory
reaction ``beta`` is a constant symmetric matrix, so its drift vanishes and
the shift reads

    xi  = xi_tilde - beta/2
    gamma = gamma_tilde
    eta_i = eta_tilde_i + beta_ii/2
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..errors import ConfigError
from ..grid import TimeGrid
from .factor import FactorModel
from .flow import OrderFlowSpec, check_quadrature
from .forms import Constant, Form, Offset, build_form
from .price import PriceModel

MATRIX_KEYS = ("xi_tilde", "gamma_tilde", "M")
VECTOR_KEYS = ("eta_tilde", "lambda", "l")


@dataclass(frozen=True, eq=False)
class RawParams:
    xi_tilde: Form
    gamma_tilde: Form
    M: Form
    eta_tilde: Form
    lam: Form
    beta: np.ndarray
    b: Form
    l: Form
    price: PriceModel
    spread_rule: float | None = None  # a_hat when b = a_hat*|sigma|


@dataclass(frozen=True, eq=False)
class EffectiveParams:
    xi: Form
    gamma: Form
    eta: Form
    M: Form
    lam: Form

    @classmethod
    def from_raw(cls, raw: RawParams) -> "EffectiveParams":
        beta = raw.beta
        xi = Offset(base=raw.xi_tilde, offset=-0.5 * beta)
        eta = Offset(base=raw.eta_tilde, offset=0.5 * np.diag(beta).copy())
        return cls(xi=xi, gamma=raw.gamma_tilde, eta=eta, M=raw.M, lam=raw.lam)


@dataclass(frozen=True, eq=False)
class ModelSpec:
    n: int
    horizon: float
    steps: int
    x0: np.ndarray
    raw: RawParams
    eff: EffectiveParams
    flows: tuple
    factor: FactorModel | None
    c: float = 1e-10
    config: dict = field(default_factory=dict)

    @property
    def grid(self) -> TimeGrid:
        return TimeGrid(self.horizon, self.steps)

    @property
    def deterministic(self) -> bool:
        """True when every coefficient is a function of time alone."""
        forms = (self.raw.xi_tilde, self.raw.gamma_tilde, self.raw.M, self.raw.eta_tilde,
                 self.raw.lam, self.raw.b, self.raw.l)
        return all(f.time_only for f in forms)

    def with_grid(self, steps: int) -> "ModelSpec":
        cfg = _deep_copy(self.config)
        cfg.setdefault("model", {})["steps"] = int(steps)
        return build_model(cfg, validate_model=False)

    def with_overrides(self, **overrides) -> "ModelSpec":
        """Rebuild from the config with ``coefficients`` entries replaced."""
        cfg = _deep_copy(self.config)
        for key, val in overrides.items():
            if key in ("x0", "horizon", "steps", "c"):
                cfg.setdefault("model", {})[key] = val
            else:
                cfg.setdefault("coefficients", {})[key] = val
        return build_model(cfg, validate_model=False)

    def cells(self, grid: TimeGrid | None = None) -> "CellCoeffs":
        return CellCoeffs.build(self, grid or self.grid)


def _deep_copy(obj):
    if isinstance(obj, dict):
        return {k: _deep_copy(v) for k, v in obj.items()}
    if isinstance(obj, list):
        return [_deep_copy(v) for v in obj]
    return obj


def _matrix_form(cfg, n, d, name):
    """Matrix coefficient; a scalar or vector config is read as a diagonal."""
    if not isinstance(cfg, dict):
        arr = np.asarray(cfg, dtype=float)
        if arr.ndim == 0:
            arr = float(arr) * np.eye(n)
        elif arr.ndim == 1:
            arr = np.diag(arr)
        cfg = {"form": "constant", "value": arr.tolist()}
    return build_form(cfg, (n, n), d, name)


_COEF_KEYS = {"M", "lambda", "eta_tilde", "gamma_tilde", "xi_tilde", "beta", "b", "l"}


def build_model(config: dict, validate_model: bool = True) -> ModelSpec:
    """Assemble a :class:`ModelSpec` from a parsed configuration tree."""
    mcfg = config.get("model", {})
    n = int(mcfg.get("n", 1))
    if n < 1:
        raise ConfigError("model.n must be >= 1")
    horizon = float(mcfg.get("horizon", 1.0))
    steps = int(mcfg.get("steps", 2000))
    x0 = np.asarray(mcfg.get("x0", np.zeros(n)), dtype=float).reshape(-1)
    if x0.size == 1 and n > 1:
        x0 = np.full(n, float(x0[0]))
    if x0.shape != (n,):
        raise ConfigError(f"model.x0: expected {n} values")

    factor = FactorModel.from_config(config["factor"]) if "factor" in config else None
    d = factor.dim if factor else 0
    if factor is not None and n != 1:
        raise ConfigError("factor-driven coefficients are supported for a single security only")

    coef = config.get("coefficients", {})
    unknown = sorted(set(coef) - _COEF_KEYS)
    if unknown:
        raise ConfigError(f"unknown coefficient keys: {', '.join(unknown)} "
                          f"(expected a subset of {', '.join(sorted(_COEF_KEYS))})")
    missing = [k for k in ("M", "eta_tilde", "lambda") if k not in coef]
    if missing:
        raise ConfigError(f"coefficients missing: {', '.join(missing)}")

    beta_raw = np.asarray(coef.get("beta", 0.0), dtype=float)
    if beta_raw.ndim == 0:
        beta_raw = float(beta_raw) * np.eye(n)
    elif beta_raw.ndim == 1:
        beta_raw = np.diag(beta_raw)
    if beta_raw.shape != (n, n):
        raise ConfigError(f"beta: expected an {n}x{n} constant matrix")

    price = PriceModel.from_config(config.get("price", 0.0), n)
    b_cfg = coef.get("b", 0.0)
    spread_rule = None
    if isinstance(b_cfg, dict) and b_cfg.get("rule") == "volatility":
        spread_rule = float(b_cfg["a_hat"])
        b_form = Constant(c=spread_rule * np.abs(price.sigma), shape=(n,), dim=0)
    else:
        b_form = build_form(b_cfg, (n,), d, "b")

    raw = RawParams(
        xi_tilde=_matrix_form(coef.get("xi_tilde", 0.0), n, d, "xi_tilde"),
        gamma_tilde=_matrix_form(coef.get("gamma_tilde", 0.0), n, d, "gamma_tilde"),
        M=_matrix_form(coef["M"], n, d, "M"),
        eta_tilde=build_form(coef["eta_tilde"], (n,), d, "eta_tilde"),
        lam=build_form(coef["lambda"], (n,), d, "lambda"),
        beta=beta_raw,
        b=b_form,
        l=build_form(coef.get("l", 0.0), (n,), d, "l"),
        price=price,
        spread_rule=spread_rule,
    )
    flow_cfg = config.get("flow", [])
    if isinstance(flow_cfg, dict):
        flow_cfg = [flow_cfg]
    if len(flow_cfg) not in (0, n):
        raise ConfigError(f"expected {n} [[flow]] tables, got {len(flow_cfg)}")
    flows = tuple(OrderFlowSpec.from_config(f) for f in flow_cfg) or tuple(
        OrderFlowSpec.from_config({"support": [[0.0, 1.0]], "rate": 0.0}) for _ in range(n))
    for f in flows:
        check_quadrature(f)

    spec = ModelSpec(n=n, horizon=horizon, steps=steps, x0=x0, raw=raw,
                     eff=EffectiveParams.from_raw(raw), flows=flows, factor=factor,
                     c=float(mcfg.get("c", 1e-10)), config=_deep_copy(config))
    # Breakpoints must be grid nodes so that cells see constant coefficients.
    grid = spec.grid
    for name, form in (("xi_tilde", raw.xi_tilde), ("gamma_tilde", raw.gamma_tilde), ("M", raw.M),
                       ("eta_tilde", raw.eta_tilde), ("lambda", raw.lam), ("b", raw.b), ("l", raw.l)):
        _check_breaks(name, form, grid)
    for i, f in enumerate(flows):
        _check_breaks(f"flow[{i}].rate", f.rate, grid)
    if raw.price.kind == "deterministic":
        _check_breaks("price.level", raw.price.level, grid)
    if validate_model:
        from .validate import validate

        validate(spec).raise_on_failure()
    return spec


def _check_breaks(name, form, grid):
    for b in form.breaks:
        if not 0.0 < b < grid.horizon:
            raise ConfigError(f"{name}: breakpoint {b} outside (0, T)")
        try:
            grid.index_of(b)
        except ValueError:
            raise ConfigError(f"{name}: breakpoint {b} is not on the time grid (h = {grid.h})") from None


@dataclass(frozen=True, eq=False)
class CellCoeffs:
    """Time-only coefficients sampled at theta = 0, 1/2, 1 of every cell.

    Arrays have shape (N, 3) + value shape.  Flow moments are per security.
    """

    grid: TimeGrid
    M: np.ndarray
    Minv: np.ndarray
    gamma: np.ndarray
    gamma_tilde: np.ndarray
    eta: np.ndarray
    eta_tilde: np.ndarray
    lam: np.ndarray
    b: np.ndarray
    l: np.ndarray
    phi: np.ndarray
    psi: np.ndarray
    phi2: np.ndarray
    theta: np.ndarray
    S: np.ndarray  # expectation curve of the unaffected price
    beta: np.ndarray
    xi: np.ndarray
    xi_tilde: np.ndarray

    @classmethod
    def build(cls, spec: ModelSpec, grid: TimeGrid) -> "CellCoeffs":
        raw, eff = spec.raw, spec.eff
        if not spec.deterministic:
            raise ConfigError("coefficients depend on the factor state; use the expansion module")
        cv = lambda f: f.cell_values(grid)
        M = cv(raw.M)
        unit = np.stack([check_quadrature(f) for f in spec.flows])  # (n, 3)
        rate = np.stack([f.rate.cell_values(grid) for f in spec.flows], axis=-1)  # (N,3,n)
        b = cv(raw.b)
        phi, psi, phi2 = rate * unit[:, 0], rate * unit[:, 1], rate * unit[:, 2]
        xi_t = raw.xi_tilde.value(np.array(grid.horizon))
        return cls(
            grid=grid, M=M, Minv=np.linalg.inv(M), gamma=cv(eff.gamma), gamma_tilde=cv(raw.gamma_tilde),
            eta=cv(eff.eta), eta_tilde=cv(raw.eta_tilde), lam=cv(raw.lam), b=b, l=cv(raw.l),
            phi=phi, psi=psi, phi2=phi2, theta=phi - b * psi, S=raw.price.mean_cells(grid),
            beta=raw.beta, xi=xi_t - 0.5 * raw.beta, xi_tilde=xi_t,
        )

    @property
    def n(self):
        return self.M.shape[-1]

    @staticmethod
    def node_value(arr):
        """Node values (N+1,) + shape: each node takes the cell to its right,
        the last node the final cell's end sample."""
        return np.concatenate([arr[:, 0], arr[-1:, 2]], axis=0)
