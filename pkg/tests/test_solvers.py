import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from _models import base, build, random_scalar, spec_of
from mmstrat.affine import solve_affine, solve_v0, solve_v1, v0_driver
from mmstrat.expansion import FactorCoefficients, approx_value, solve_expansion
from mmstrat.oracle import closed_form_riccati, solve_pde_1d
from mmstrat.riccati import solve_v2, v2_bounds


@given(st.floats(0.1, 10.0), st.floats(0.2, 3.0), st.floats(0.0, 2.0), st.floats(0.1, 2.0), st.floats(0.1, 3.0))
@settings(max_examples=25, deadline=None)
def test_scalar_v2_positive_and_bounded(xi, M, gamma, lam, eta):
    cells = build(base(steps=100, M=M, gamma_tilde=gamma, xi_tilde=xi, eta_tilde=eta, **{"lambda": lam})).cells()
    v = solve_v2(cells).values[:, 0, 0]
    assert np.all(v > 0)
    lo, up = v2_bounds(cells, 0.5)
    assert np.all(v >= lo - 1e-10) and np.all(v <= up + 1e-10)


def test_riccati_matches_closed_form_without_dark_pool():
    cells = build(base(steps=50, M=0.7, xi_tilde=3.0, **{"lambda": 0.0}), validate=False).cells()
    v = solve_v2(cells).values[:, 0, 0]
    assert np.max(np.abs(v - closed_form_riccati(3.0, 0.7, 1.0, cells.grid.times))) < 1e-9


def test_v1_vanishes_without_linear_sources():
    spec = build(base(steps=100, gamma_tilde=0.5))
    sol = solve_affine(spec)
    assert np.max(np.abs(sol.v1.values)) == 0.0
    assert np.max(np.abs(sol.v0.values)) == 0.0


def test_v0_terminal_zero_and_sign():
    # V0 runs backwards from 0 with dV0/ds = a0
    rng = np.random.default_rng(3)
    spec = build(random_scalar(rng, steps=200))
    sol = solve_affine(spec)
    assert sol.v0.values[-1] == 0.0
    a0 = v0_driver(sol.v2, sol.v1, sol.cells)
    h = sol.cells.grid.h
    # Simpson on each cell reproduces V0 increments
    inc = h / 6.0 * (a0[:, 0] + 4 * a0[:, 1] + a0[:, 2])
    assert np.allclose(np.diff(sol.v0.values), inc, atol=1e-12)


def test_v1_routes_agree_on_matrix_free_case():
    rng = np.random.default_rng(8)
    spec = build(random_scalar(rng, steps=300))
    cells = spec.cells()
    v2 = solve_v2(cells)
    a = solve_v1(cells, v2, spec.raw.price, "propagator").values
    b = solve_v1(cells, v2, spec.raw.price, "ode").values
    assert np.max(np.abs(a - b)) <= 1e-7 * np.max(np.abs(b))


def test_ou_price_split_consistent_with_deterministic_limit():
    cfg = base(steps=200, gamma_tilde=0.3, b=0.05)
    cfg["flow"] = [{"support": [[-1.0, -0.1], [0.1, 1.0]], "rate": 3.0}]
    det = dict(cfg, price={"model": "deterministic", "level": 5.0})
    ou = dict(cfg, price={"model": "ou", "s0": 5.0, "theta": 5.0, "kappa": 1.0, "sigma": 0.0})
    a = solve_affine(build(det))
    b = solve_affine(build(ou))
    assert np.allclose(a.v1.values, b.v1.values, atol=1e-10)
    assert np.allclose(a.v0.values, b.v0.values, atol=1e-10)


def test_expansion_derivatives_match_finite_differences():
    spec = spec_of("factor")
    fc = FactorCoefficients(spec)
    x = np.array([[0.3]])
    v = np.array([1.2])
    f, fv, fvv, fx, fxx, fxv = fc.f_all(0.4, x, v)
    h = 1e-5
    fxp = fc.f(0.4, x + h, v)
    fxm = fc.f(0.4, x - h, v)
    assert fx[0, 0] == pytest.approx((fxp - fxm)[0] / (2 * h), rel=1e-6)
    assert fv[0] == pytest.approx((fc.f(0.4, x, v + h) - fc.f(0.4, x, v - h))[0] / (2 * h), rel=1e-6)
    assert fxx[0, 0, 0] == pytest.approx((fxp - 2 * f + fxm)[0] / h**2, rel=1e-3)


def test_expansion_order0_against_small_noise_pde():
    spec = spec_of("factor")
    sol = solve_expansion(FactorCoefficients(spec), spec.grid, 0.0, spec.factor.x0, order=2)
    # one unextrapolated backward-Euler solve: O(dt) error of a few 1e-4
    g = solve_pde_1d(spec, 0.05, nodes=401, steps=2000)
    assert abs(approx_value(sol, 2, 0.05) - g.value_at()) < 1e-3
    assert abs(approx_value(sol, 0, 0.05) - g.value_at()) < 1e-3


def test_pde_constant_coefficients_reduce_to_riccati():
    spec = spec_of("factor")
    cfg = dict(spec.config)
    cfg["coefficients"] = {"M": 0.8, "lambda": 0.5, "eta_tilde": 0.7, "gamma_tilde": 0.4, "xi_tilde": 1.5,
                           "beta": 0.2}
    flat = build(cfg)
    g = solve_pde_1d(flat, 0.3, nodes=101, steps=4000)
    cells = build({k: v for k, v in cfg.items() if k != "factor"}).cells()
    ode = solve_v2(cells).values[0, 0, 0]
    assert np.max(np.abs(g.v0 - ode)) < 1e-3


def test_v0_sign_with_constant_driver():
    # xi = gamma = 0 gives V2 = 0 and V1 = 0; buy-only flow with Phi = Theta = 2 and M = 1
    # leaves the driver a0 = Theta' M Theta / 4 = 1, hence V0(t) = -(T - t).
    cfg = base(steps=100, xi_tilde=0.0)
    cfg["flow"] = [{"support": [[0.5, 1.5]], "rate": 2.0}]
    sol = solve_affine(build(cfg))
    t = sol.cells.grid.times
    assert np.max(np.abs(sol.v2.values)) == 0.0
    assert np.allclose(sol.v0.values, -(1.0 - t), atol=1e-12)


def test_pde_backends_agree():
    from mmstrat import kernels
    from mmstrat.oracle import solve_pde_1d

    if "cython" not in kernels.available_backends():
        pytest.skip("compiled core not built")
    spec = spec_of("factor")
    a, b = (solve_pde_1d(spec, 0.2, nodes=201, steps=500, backend=k) for k in ("python", "cython"))
    assert np.max(np.abs(a.v0 - b.v0)) < 1e-12
