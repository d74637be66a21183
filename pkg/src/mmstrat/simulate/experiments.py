"""Verification experiments built on the Monte Carlo engine.

Each function returns ``(rows, summary)``: ``rows`` is a list of flat dicts
(one CSV line each) and ``summary`` a dict of scalar diagnostics.
"""

from __future__ import annotations

import copy
import warnings

import numpy as np

from ..model.validate import assumption_c
from .engine import Simulator, _mean_se, paired_difference
from .strategy import optimal, perturbation_battery, zero


def optimality(sim: Simulator, n_paths: int, seed: int, x0=None):
    """Optimal cost against the value function and against the perturbation battery."""
    x0 = sim.spec.x0 if x0 is None else x0
    V = float(sim.sol.value(0.0, x0))
    ro = sim.run(optimal(), n_paths, seed, x0)
    co = ro.cost("J")
    z_value = (co.mean - V) / co.std_error
    rows = [{"strategy": "optimal", "mean": co.mean, "std_error": co.std_error, "n_paths": co.n_paths,
             "value_function": V, "diff": co.mean - V, "diff_se": co.std_error, "z": z_value}]
    worst = np.inf
    same_events = True
    for rule in perturbation_battery():
        r = sim.run(rule, n_paths, seed, x0)
        same_events &= r.event_digest == ro.event_digest
        c = r.cost("J")
        ok = r.ok & ro.ok
        d, se = paired_difference(r.J[ok], ro.J[ok])
        worst = min(worst, d / se)
        rows.append({"strategy": rule.name, "mean": c.mean, "std_error": c.std_error, "n_paths": c.n_paths,
                     "value_function": V, "diff": d, "diff_se": se, "z": d / se})
    summary = {"value_function": V, "optimal_mean": co.mean, "optimal_se": co.std_error,
               "z_value": z_value, "min_paired_z": worst, "common_events": bool(same_events),
               "event_digest": ro.event_digest}
    return rows, summary


def equivalence(sim: Simulator, n_paths: int, seed: int, rules=None, x0=None):
    """Raw objective against the shifted cost plus ``x'beta x/2``, per path."""
    rules = rules or [optimal(), perturbation_battery()[4], zero()]
    rows = []
    for rule in rules:
        r = sim.run(rule, n_paths, seed, x0)
        ok = r.ok
        raw, J = _mean_se(r.raw[ok]), _mean_se(r.J[ok])
        d, se = paired_difference(r.raw[ok], r.J[ok] + r.half_beta_x)
        rows.append({"strategy": rule.name, "raw_mean": raw[0], "raw_se": raw[1], "J_mean": J[0],
                     "J_se": J[1], "half_beta_x": r.half_beta_x, "diff": d, "diff_se": se,
                     "z": d / se if se > 0 else 0.0})
    return rows, {"max_abs_z": max(abs(r["z"]) for r in rows)}


def martingale_diagnostics(sim: Simulator, n_paths: int, seed: int, rules=None, x0=None):
    """Increments of ``V(t, X_t) + running cost up to t`` between diagnostic nodes.

    The process is a martingale under the optimal strategy and a
    submartingale under any other admissible one.
    """
    rules = rules or [optimal(), zero()]
    rows = []
    summary = {}
    t = sim.grid.times[sim.diag_nodes]
    for rule in rules:
        r = sim.run(rule, n_paths, seed, x0)
        ok = r.ok
        Y = sim.value_at_nodes(r.Xd[ok], None if r.Sd is None else r.Sd[ok]) + r.Jd[ok]
        inc = np.diff(Y, axis=1)
        zs = []
        for j in range(inc.shape[1]):
            m, se = _mean_se(inc[:, j])
            z = m / se if se > 0 else 0.0
            zs.append(z)
            rows.append({"strategy": rule.name, "t_start": t[j], "t_end": t[j + 1], "mean_increment": m,
                         "std_error": se, "z": z})
        m, se = _mean_se(Y[:, -1] - Y[:, 0])
        z = m / se if se > 0 else 0.0
        rows.append({"strategy": rule.name, "t_start": t[0], "t_end": t[-1], "mean_increment": m,
                     "std_error": se, "z": z})
        summary[rule.name] = {"increment_z": zs, "total": m, "total_se": se, "total_z": z}
    return rows, summary


def penalty_sweep(spec, L_list, n_paths: int, seed: int, c: float | None = None, workers: int = 1,
                  backend=None):
    """Terminal inventory against the terminal penalty ``xi = L``.

    For each ``L`` the coefficients are re-solved with ``xi = L`` and
    ``E[X_T^2]`` is estimated under the optimal strategy (common events
    across ``L``).  The bound ``C (eps_L/(T + eps_L))^{2 c_tilde}``,
    ``eps_L = 1/L``, is fitted at the smallest ``L``.
    """
    if spec.n != 1:
        raise ValueError("the penalty sweep is defined for a single security")
    c_val, c_tilde, lam_bar, M_bar, ok, msg = assumption_c(spec, c)
    if not ok:
        warnings.warn(f"terminal-penalty assumption not met: {msg}", stacklevel=2)
    T = spec.horizon
    L_list = sorted(float(L) for L in L_list)
    stats = []
    for L in L_list:
        sim = Simulator(spec, xi=np.array([[L]]), workers=workers, backend=backend)
        r = sim.run(optimal(), n_paths, seed)
        x2 = r.X_T[r.ok, 0] ** 2
        m, se = _mean_se(x2)
        stats.append((L, m, se, x2))
    eps = np.array([1.0 / L for L, *_ in stats])
    ratio = eps / (T + eps)
    shape = ratio ** (2.0 * c_tilde)
    means = np.array([s[1] for s in stats])
    C = means[0] / shape[0]
    slope = float(np.polyfit(np.log(ratio), np.log(means), 1)[0])
    rows = []
    for j, (L, m, se, x2) in enumerate(stats):
        if j:
            dd, dse = paired_difference(stats[j - 1][3], x2)
        else:
            dd, dse = np.nan, np.nan
        rows.append({"L": L, "eps_L": eps[j], "ratio": ratio[j], "mean_XT2": m, "std_error": se,
                     "bound": C * shape[j], "decrease": dd, "decrease_se": dse,
                     "decrease_z": dd / dse if j and dse > 0 else np.nan})
    summary = {"c": c_val, "c_tilde": c_tilde, "theory_exponent": 2.0 * c_tilde, "fitted_slope": slope,
               "assumption_ok": ok, "assumption_message": msg, "C": C,
               "monotone": all(r["decrease_z"] >= 3.0 for r in rows[1:]),
               "bound_ok": all(r["mean_XT2"] <= r["bound"] * (1 + 1e-12) for r in rows)}
    return rows, summary


def spread_sweep(config: dict, a_hats, n_paths: int, seed: int, workers: int = 1, backend=None):
    """Cost and spread revenue of the optimal strategy for spreads ``b = a_hat |sigma|``."""
    from ..model.spec import build_model

    rows = []
    for a in a_hats:
        cfg = copy.deepcopy(config)
        cfg.setdefault("coefficients", {})["b"] = {"rule": "volatility", "a_hat": float(a)}
        spec = build_model(cfg)
        sim = Simulator(spec, workers=workers, backend=backend)
        r = sim.run(optimal(), n_paths, seed)
        ok = r.ok
        cost = r.cost("J")
        rev = r.spread_revenue[ok]
        m, se = _mean_se(rev)
        q = np.quantile(rev, [0.05, 0.25, 0.5, 0.75, 0.95])
        rows.append({"a_hat": float(a), "cost_mean": cost.mean, "cost_se": cost.std_error,
                     "revenue_mean": m, "revenue_se": se, "revenue_q05": q[0], "revenue_q25": q[1],
                     "revenue_q50": q[2], "revenue_q75": q[3], "revenue_q95": q[4],
                     "event_digest": r.event_digest[:16]})
    return rows, {"monotone_revenue": all(b["revenue_mean"] >= a["revenue_mean"]
                                          for a, b in zip(rows, rows[1:]))}
