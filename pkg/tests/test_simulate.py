import numpy as np
import pytest

from _models import base, build, config, spec_of
from mmstrat import kernels
from mmstrat.simulate import (Simulator, custom, deterministic_decay, estimate_cost, estimate_raw_cost, optimal,
                              perturbed, reconstruct_position, sample_block, sample_events, simulate_path, zero)
from mmstrat.simulate.events import BLOCK


def flow_cfg(rate=3.0, lam=1.0, **kw):
    cfg = base(steps=100, gamma_tilde=0.4, xi_tilde=1.5, beta=0.2, b=0.05, l=0.02, **{"lambda": lam}, **kw)
    cfg["price"] = {"model": "deterministic", "level": 2.0}
    cfg["model"]["x0"] = [0.7]
    if rate:
        cfg["flow"] = [{"support": [[-1.0, -0.2], [0.2, 1.0]], "rate": rate}]
    return cfg


@pytest.fixture(scope="module")
def sim():
    return Simulator(build(flow_cfg()))


def test_empty_stream_without_intensities():
    spec = build(flow_cfg(rate=0.0, lam=1e-300), validate=False)
    blk = sample_block(spec, spec.grid, 1, 0, 50)
    assert blk.time.size == 0


def test_fill_count_is_poisson_mean():
    spec = build(flow_cfg(rate=0.0, lam=2.0))
    counts = np.concatenate([np.diff(sample_block(spec, spec.grid, 11, b).ptr) for b in range(98)])
    P = counts.size
    assert abs(counts.mean() - 2.0) <= 3 * np.sqrt(2.0 / P)


def test_symmetric_marks_have_zero_mean():
    spec = build(flow_cfg(rate=3.0, lam=1e-300), validate=False)
    blk = sample_block(spec, spec.grid, 4, 0)
    z = blk.mark[blk.kind == 0]
    assert abs(z.mean()) <= 3 * z.std(ddof=1) / np.sqrt(z.size)
    assert np.all((np.abs(z) >= 0.2) & (np.abs(z) <= 1.0))


def test_event_streams_depend_only_on_seed_and_path(sim):
    a = sample_block(sim.spec, sim.grid, 9, 1)
    b = sample_block(sim.spec, sim.grid, 9, 1, n_paths=100)
    assert a.for_path(17) == b.for_path(17)
    assert sample_events(sim.spec, 9, BLOCK + 17) == a.for_path(17)
    r1 = sim.run(optimal(), 1500, 9)
    r2 = sim.run(zero(), 1500, 9)
    assert r1.event_digest == r2.event_digest
    assert np.array_equal(r1.ncust, r2.ncust)


def test_zero_strategy_zero_flow_costs_terminal_penalty_only():
    cfg = base(steps=50, **{"lambda": 1e-300}, xi_tilde=2.0, beta=0.0)
    cfg["model"]["x0"] = [1.3]
    spec = build(cfg, validate=False)
    r = Simulator(spec).run(zero(), 200, 1)
    assert np.all(r.J == 2.0 * 1.3**2)
    assert np.all(r.X_T[:, 0] == 1.3)


def test_zero_intensities_repo_term():
    cfg = base(steps=50, **{"lambda": 1e-300}, l=0.03)
    cfg["model"]["x0"] = [2.0]
    r = Simulator(build(cfg, validate=False)).run(zero(), 10, 1)
    assert np.allclose(r.terms["repo"], -0.03 * 2.0, atol=1e-15)
    for k in ("exch", "spread", "darkraw"):
        assert np.all(r.terms[k] == 0.0)


def test_zero_strategy_keeps_position_mean_with_symmetric_flow():
    r = Simulator(build(flow_cfg(lam=1e-300), validate=False)).run(zero(), 10_000, 5)
    m, se = r.X_T[:, 0].mean(), r.X_T[:, 0].std(ddof=1) / 100
    assert abs(m - 0.7) <= 3 * se


def test_optimal_cost_matches_value_function(sim):
    V = sim.sol.value(0.0, sim.spec.x0)
    c = estimate_cost(sim, optimal(), 20_000, 21)
    assert abs(c.mean - V) <= 3 * c.std_error
    assert c.std_error == pytest.approx(np.std(sim.run(optimal(), 20_000, 21).J, ddof=1) / np.sqrt(20_000))


def test_shifted_strategy_costs_more(sim):
    ro = sim.run(optimal(), 20_000, 22)
    rp = sim.run(perturbed(pi_shift=0.1), 20_000, 22)
    d = rp.J - ro.J
    assert d.mean() >= 3 * d.std(ddof=1) / np.sqrt(d.size)


def test_raw_and_shifted_estimates_agree(sim):
    raw = estimate_raw_cost(sim, optimal(), 20_000, 23)
    J = estimate_cost(sim, optimal(), 20_000, 23)
    half = 0.5 * 0.2 * 0.7**2
    assert abs(raw.mean - (J.mean + half)) <= 3 * np.hypot(raw.std_error, J.std_error)


def test_conservation_and_compensated_residuals(sim):
    r = sim.run(perturbed(scale=1.3), 20_000, 24)
    total = sum(r.terms[k] for k in ("pen", "flow", "impact", "linpi", "dark", "const"))
    assert np.array_equal(total, r.J)
    for name, (m, se) in r.residuals().items():
        assert abs(m) <= 3.5 * se, name


def test_path_replay_bookkeeping_and_reconstruction(sim):
    r = sim.run(optimal(), 6, 31)
    for p in range(3):
        rec = simulate_path(sim, optimal(), 31, p)
        assert rec.bookkeeping_error(sim.spec.x0) < 1e-12
        assert rec.X[-1, 0] == pytest.approx(r.X_T[p, 0], abs=1e-12)
        xr, _ = reconstruct_position(sim.sol, sample_events(sim.spec, 31, p), 0.7)
        assert abs(xr - r.X_T[p, 0]) < 1e-8


def test_deterministic_decay_without_flow():
    cfg = base(steps=400, **{"lambda": 1e-12}, gamma_tilde=0.3, xi_tilde=20.0)
    cfg["model"]["x0"] = [1.5]
    spec = build(cfg, validate=False)
    sim = Simulator(spec)
    r = sim.run(optimal(), 3, 2)
    # RK4 cell maps at h r ~ 0.05 carry ~1e-7 relative error
    assert np.allclose(r.X_T[:, 0], deterministic_decay(sim.sol, 1.5), rtol=1e-6, atol=0)


def test_custom_affine_strategy_runs(sim):
    r = sim.run(custom(pi0=[0.1], Pi=[[-0.5]], d0=[0.0], D=[[-0.2]]), 2000, 3)
    assert np.isfinite(r.J).all()


def test_overflow_guard_aborts_path():
    spec = build(flow_cfg(rate=1.0))
    r = Simulator(spec).run(custom(pi0=[0.0], Pi=[[40.0]], d0=[0.0], D=[[0.0]]), 50, 1)
    assert r.aborted.all()
    assert r.cost("J").n_paths == 0


def test_worker_count_does_not_change_results(sim):
    a = sim.run(optimal(), 2500, 8)
    b = Simulator(sim.spec, sol=sim.sol, workers=2).run(optimal(), 2500, 8)
    assert np.array_equal(a.J, b.J) and a.event_digest == b.event_digest


@pytest.mark.parametrize("name", ["default", "spread"])
def test_backends_agree(name):
    if "cython" not in kernels.available_backends():
        pytest.skip("compiled core not built")
    spec = spec_of(name)
    out = [Simulator(spec, backend=b, diag_every=20).run(perturbed(scale=1.1), 1500, 4) for b in ("python", "cython")]
    assert np.allclose(out[0].J, out[1].J, rtol=0, atol=1e-10)
    assert np.allclose(out[0].Xd, out[1].Xd, rtol=0, atol=1e-12)
    assert np.array_equal(out[0].nfill, out[1].nfill)


def test_zero_everything_model_has_zero_martingale_residual():
    cfg = base(steps=50, **{"lambda": 1e-300}, xi_tilde=0.0)
    sim = Simulator(build(cfg, validate=False), diag_every=10)
    r = sim.run(optimal(), 100, 1)
    Y = sim.value_at_nodes(r.Xd) + r.Jd
    assert np.all(Y == 0.0)


def test_penalty_config_is_single_security():
    assert len(config("appA")["flow"]) == 1


def test_ou_optimal_cost_matches_value_function():
    sim = Simulator(spec_of("spread"))
    x0 = np.array([0.8])
    V = sim.sol.value(0.0, x0, sim.price.s0)
    r = sim.run(optimal(), 40_000, 12, x0)
    c = r.cost("J")
    assert abs(c.mean - V) <= 3 * c.std_error


def test_partial_map_equals_state_rk4_with_price_state():
    from mmstrat.simulate.maps import partial_map, stage_samples

    sim = Simulator(spec_of("spread"))
    tab = sim.tables(optimal())
    k, ta, tb = np.array([50]), np.array([0.1]), np.array([0.7])
    y = np.array([0.4, 10.3, 9.8])
    g0, g1, c0, c1, c2 = (a[0] for a in partial_map(tab, k, ta, tb))
    pi0, Pi, q0, q1, q2 = (stage_samples(a, k, ta, tb)[0] for a in (tab.pi0, tab.Pi, tab.q0, tab.q1, tab.q2))
    L = 0.6 * tab.h

    def f(j, x):
        Y = np.r_[x, y[1:]]
        return pi0[j] + Pi[j] @ Y, q0[j] + q1[j] @ Y + np.einsum("m,qml,l->q", Y, q2[j], Y)

    k1 = f(0, y[:1])
    k2 = f(1, y[:1] + 0.5 * L * k1[0])
    k3 = f(1, y[:1] + 0.5 * L * k2[0])
    k4 = f(2, y[:1] + L * k3[0])
    x = y[:1] + L / 6 * (k1[0] + 2 * k2[0] + 2 * k3[0] + k4[0])
    c = L / 6 * (k1[1] + 2 * k2[1] + 2 * k3[1] + k4[1])
    assert np.allclose(g0 + g1 @ y, x, rtol=0, atol=1e-13)
    assert np.allclose(c0 + c1 @ y + y @ c2 @ y, c, rtol=0, atol=1e-13)
