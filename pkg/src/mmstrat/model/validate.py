"""Standing-assumption checks with a per-assumption report.

Labels follow the multi-security statement (A', B'), which reduces to the
single-security one for n = 1; P is checked when a factor model is present
and C only on request (penalty sweep).  Each failure names the assumption
and the first grid point (or factor state) where it breaks.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..errors import AssumptionViolation

SYM_TOL = 1e-12
PSD_TOL = 1e-10


@dataclass
class Check:
    assumption: str
    description: str
    passed: bool
    message: str = ""
    where: str = ""


@dataclass
class Report:
    checks: list = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return all(c.passed for c in self.checks)

    def add(self, assumption, description, passed, message="", where=""):
        self.checks.append(Check(assumption, description, bool(passed), message, where))

    def failures(self):
        return [c for c in self.checks if not c.passed]

    def raise_on_failure(self):
        for c in self.checks:
            if not c.passed:
                raise AssumptionViolation(c.assumption, c.message, c.where)

    def lines(self):
        out = []
        for c in self.checks:
            status = "PASS" if c.passed else "FAIL"
            line = f"{status}  {c.assumption:<10} {c.description}"
            if not c.passed:
                line += f": {c.message}" + (f" (at {c.where})" if c.where else "")
            out.append(line)
        return out


def _first(mask, times):
    idx = np.argwhere(mask)
    if idx.size == 0:
        return None
    return f"t={times[idx[0][0]]:.6g}"


def _sym_err(a):
    return np.max(np.abs(a - np.swapaxes(a, -1, -2)), axis=(-1, -2))


def _min_eig(a):
    return np.linalg.eigvalsh(0.5 * (a + np.swapaxes(a, -1, -2)))[..., 0]


def _sample_points(spec):
    """Time samples and, with a factor model, state samples for the checks."""
    grid = spec.grid
    times = np.concatenate([grid.times[:-1] + 0.5 * grid.h, grid.times])
    times.sort()
    if spec.factor is None:
        return times, None
    times = np.linspace(0.0, spec.horizon, 41)
    f = spec.factor
    half = 6.0 * f.epsilon * f.sigma_bar() * np.sqrt(spec.horizon) + 1.0
    if f.dim == 1:
        xs = np.linspace(f.x0[0] - half, f.x0[0] + half, 41)[:, None]
    else:
        rng = np.random.default_rng(0)
        xs = f.x0 + half * (2 * rng.random((256, f.dim)) - 1)
    return times, xs


def _eval(form, times, xs):
    """Values on the (time x state) product, flattened to (K,) + shape, with labels."""
    if xs is None:
        return form.value(times), [f"t={t:.6g}" for t in times]
    tt = np.repeat(times, len(xs))
    xx = np.tile(xs, (len(times), 1))
    vals = form.value(tt, xx) if not form.time_only else form.value(tt)
    labels = [f"t={t:.6g}, x={np.array2string(x, precision=4)}" for t, x in zip(tt, xx)]
    return vals, labels


def validate(spec, check_c: bool = False, c_override: float | None = None) -> Report:
    rep = Report()
    raw, eff = spec.raw, spec.eff
    c = spec.c
    times, xs = _sample_points(spec)
    T = np.array([spec.horizon])
    assumption_tag = "P" if spec.factor is not None else None

    def tag(base, form=None):
        if assumption_tag and form is not None and not form.time_only:
            return f"P / {base}"
        return base

    # (a1') prices non-negative (expectation curve for stochastic models)
    smean = raw.price.mean(times)
    bad = np.any(smean < 0, axis=-1)
    rep.add("A' (a1')", "unaffected price non-negative", not bad.any(),
            "price below zero", _first(bad, times) or "")

    # (a3') flow rates non-negative
    ok = True
    where = ""
    for i, fl in enumerate(spec.flows):
        r = fl.rate.value(times)
        if np.any(r < 0):
            ok, where = False, f"security {i}, " + _first(r < 0, times)
            break
    rep.add("A' (a3')", "order-flow intensities non-negative, support excludes zero", ok,
            "negative order-flow intensity", where)

    # (a4') gamma_tilde symmetric PSD
    for name, form, label in (("gamma_tilde", raw.gamma_tilde, "A' (a4')"),):
        v, labels = _eval(form, times, xs)
        sym = _sym_err(v) > SYM_TOL
        psd = _min_eig(v) < -PSD_TOL
        where = labels[np.argmax(sym | psd)] if (sym | psd).any() else ""
        rep.add(tag(label, form), f"{name} symmetric positive semidefinite", not (sym | psd).any(),
                f"{name} not symmetric" if sym.any() else f"{name} has a negative eigenvalue", where)

    # (a5') M symmetric and bounded
    v, labels = _eval(raw.M, times, xs)
    sym = _sym_err(v) > SYM_TOL
    fin = ~np.all(np.isfinite(v), axis=(-1, -2))
    bad = sym | fin
    rep.add(tag("A' (a5')", raw.M), "M symmetric and bounded", not bad.any(),
            "M not symmetric" if sym.any() else "M not finite", labels[np.argmax(bad)] if bad.any() else "")

    # (a6') xi_tilde symmetric PSD
    if raw.xi_tilde.time_only:
        v, labels = raw.xi_tilde.value(T), ["t=T"]
    else:
        v, labels = _eval(raw.xi_tilde, times, xs)
    sym = _sym_err(v) > SYM_TOL
    psd = _min_eig(v) < -PSD_TOL
    bad = sym | psd
    rep.add(tag("A' (a6')", raw.xi_tilde), "xi_tilde symmetric positive semidefinite", not bad.any(),
            "xi_tilde not symmetric" if sym.any() else "xi_tilde has a negative eigenvalue",
            labels[np.argmax(bad)] if bad.any() else "")

    # (a7') lambda, eta_tilde strictly positive
    for name, form in (("lambda", raw.lam), ("eta_tilde", raw.eta_tilde)):
        v, labels = _eval(form, times, xs)
        bad = np.any(v <= 0, axis=-1)
        rep.add(tag("A' (a7')", form), f"{name} strictly positive", not bad.any(),
                f"{name} not strictly positive", labels[np.argmax(bad)] if bad.any() else "")

    # (a8') beta symmetric
    rep.add("A' (a8')", "beta symmetric", _sym_err(raw.beta) <= SYM_TOL, "beta not symmetric")

    # (b2') xi PSD
    if eff.xi.time_only:
        v, labels = eff.xi.value(T), ["t=T"]
    else:
        v, labels = _eval(eff.xi, times, xs)
    bad = _min_eig(v) < -PSD_TOL
    rep.add(tag("B' (b2')", eff.xi), "xi = xi_tilde - beta/2 positive semidefinite", not bad.any(),
            "xi has a negative eigenvalue", labels[np.argmax(bad)] if bad.any() else "")

    # (b3') gamma PSD
    v, labels = _eval(eff.gamma, times, xs)
    bad = _min_eig(v) < -PSD_TOL
    rep.add(tag("B' (b3')", eff.gamma), "gamma positive semidefinite", not bad.any(),
            "gamma has a negative eigenvalue", labels[np.argmax(bad)] if bad.any() else "")

    # (b4') lambda*eta >= c and M >= c
    lv, labels = _eval(raw.lam, times, xs)
    ev, _ = _eval(eff.eta, times, xs)
    bad_le = np.any(lv * ev < c, axis=-1)
    mv, mlabels = _eval(raw.M, times, xs)
    bad_m = _min_eig(mv) < c
    if bad_m.any():
        rep.add(tag("B' (b4')", raw.M), "M uniformly positive definite", False,
                f"smallest eigenvalue of M below c = {c:g}", mlabels[np.argmax(bad_m)])
    else:
        rep.add(tag("B' (b4')", raw.M), "M uniformly positive definite", True)
    rep.add(tag("B' (b4')", raw.lam), "lambda*eta bounded below by c", not bad_le.any(),
            f"lambda*eta below c = {c:g}", labels[np.argmax(bad_le)] if bad_le.any() else "")

    if spec.factor is not None:
        a1, a2 = spec.factor.sigma_bounds()
        rep.add("P", "uniform ellipticity of the factor diffusion", a1 > 0,
                f"sigma sigma^T eigenvalue bounds ({a1:g}, {a2:g})")

    if check_c:
        _check_c(spec, rep, c_override)
    return rep


def assumption_c(spec, c: float | None = None):
    """Return (c, c_tilde, lambda_bar, M_bar, ok, message) for a single security."""
    times, _ = _sample_points(spec)
    M = spec.raw.M.value(times)[..., 0, 0]
    lam = spec.raw.lam.value(times)[..., 0]
    eta = spec.eff.eta.value(times)[..., 0]
    M_bar, lam_bar = float(M.max()), float(lam.max())
    c_max = float(min(M.min(), eta.min()))
    if c is None:
        c = c_max
    msgs = []
    if c > c_max + 1e-15:
        msgs.append(f"c = {c:g} exceeds the (b3) lower bound min(M, eta) = {c_max:g}")
    if not c / (1 + lam_bar) < 1:
        msgs.append(f"c/(1+lambda_bar) = {c / (1 + lam_bar):g} is not < 1")
    c_tilde = c / (M_bar * (1 + lam_bar))
    if not c_tilde < 0.5:
        msgs.append(f"c_tilde = {c_tilde:g} is not < 1/2")
    return c, c_tilde, lam_bar, M_bar, not msgs, "; ".join(msgs)


def _check_c(spec, rep, c_override):
    if spec.n != 1 or not spec.deterministic:
        rep.add("C", "terminal-penalty constants", False, "only checked for one security with time-only coefficients")
        return
    _, c_tilde, _, _, ok, msg = assumption_c(spec, c_override)
    rep.add("C", f"c/(1+lambda_bar) < 1 and c_tilde < 1/2 (c_tilde = {c_tilde:.6g})", ok, msg)
