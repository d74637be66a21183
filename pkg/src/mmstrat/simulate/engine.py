"""Monte Carlo engine: blocks of paths, cost estimators and per-path records.

Each block of :data:`~mmstrat.simulate.events.BLOCK` paths is simulated
independently (optionally in worker processes) and results are concatenated
in block order, so estimates depend only on (config, seed, n_paths).

Per-path outputs of a run:

* ``J``: cost in the shifted form (running rates with compensated jumps plus
  ``X_T' xi X_T``), broken down into ``pen, flow, impact, linpi, dark, const``;
* ``raw``: the original objective, ``rpen, exch, repo`` plus the jump terms
  ``spread`` (customer orders at the impacted price) and ``darkraw`` (fills);
* compensated residuals ``sum z - int Phi``, ``fills - int lambda`` and
  ``sum delta - int lambda delta`` per security;
* optionally the position and cumulative running cost at diagnostic nodes.
"""

from __future__ import annotations

from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .. import kernels
from ..affine import solve_affine
from .events import BLOCK, price_normals, sample_block
from .maps import J_TERMS, RAW_TERMS, build_tables
from .strategy import StrategyRule

GUARD = 1e6


@dataclass
class CostEstimate:
    mean: float
    std_error: float
    n_paths: int
    breakdown: dict
    seed: int
    label: str = ""
    n_aborted: int = 0


def _mean_se(a):
    a = np.asarray(a, dtype=float)
    if a.size < 2:
        return float(a.mean()) if a.size else float("nan"), float("nan")
    return float(a.mean()), float(a.std(ddof=1) / np.sqrt(a.size))


@dataclass(eq=False)
class SimResult:
    label: str
    seed: int
    n_paths: int
    x0: np.ndarray
    terms: dict  # name -> (P,) per-path cost pieces
    X_T: np.ndarray
    sumz: np.ndarray
    ncust: np.ndarray
    nfill: np.ndarray
    sumdelta: np.ndarray
    int_pi: np.ndarray
    int_lam_delta: np.ndarray
    comp_phi: np.ndarray  # int Phi ds per security
    comp_lam: np.ndarray  # int lambda ds per security
    diag_nodes: np.ndarray
    Xd: np.ndarray
    Jd: np.ndarray
    Sd: np.ndarray | None
    aborted: np.ndarray
    spread_revenue: np.ndarray
    event_digest: str
    half_beta_x: float = 0.0
    meta: dict = field(default_factory=dict)

    @property
    def ok(self):
        return ~self.aborted

    @property
    def J(self):
        return sum(self.terms[k] for k in J_TERMS)

    @property
    def raw(self):
        return sum(self.terms[k] for k in RAW_TERMS + ("spread", "darkraw"))

    def cost(self, form="J") -> CostEstimate:
        v = (self.J if form == "J" else self.raw)[self.ok]
        mean, se = _mean_se(v)
        names = J_TERMS if form == "J" else RAW_TERMS + ("spread", "darkraw")
        bd = {k: _mean_se(self.terms[k][self.ok]) for k in names}
        return CostEstimate(mean=mean, std_error=se, n_paths=int(self.ok.sum()), breakdown=bd,
                            seed=self.seed, label=self.label, n_aborted=int(self.aborted.sum()))

    def residuals(self):
        """Compensated jump residuals per security: (mean, se) for each kind."""
        ok = self.ok
        out = {}
        for i in range(self.sumz.shape[1]):
            out[f"orders[{i}]"] = _mean_se((self.sumz[:, i] - self.comp_phi[i])[ok])
            out[f"fills[{i}]"] = _mean_se((self.nfill[:, i] - self.comp_lam[i])[ok])
            out[f"fill_sizes[{i}]"] = _mean_se((self.sumdelta[:, i] - self.int_lam_delta[:, i])[ok])
        return out


class Simulator:
    """Holds the solved coefficients of one model; runs strategies against it."""

    def __init__(self, spec, sol=None, grid=None, backend: str | None = None, workers: int = 1,
                 diag_every: int = 0, xi=None):
        self.spec = spec
        self.grid = grid or spec.grid
        self.sol = sol if sol is not None else solve_affine(spec, self.grid, xi=xi)
        self.backend = backend
        self.workers = max(1, int(workers))
        N = self.grid.steps
        self.diag_nodes = (np.arange(0, N + 1, diag_every) if diag_every else np.array([0, N]))
        if self.diag_nodes[-1] != N:
            self.diag_nodes = np.append(self.diag_nodes, N)
        c = self.sol.cells
        h = self.grid.h
        self.comp_phi = c.phi[:, 1].sum(axis=0) * h
        self.comp_lam = c.lam[:, 1].sum(axis=0) * h
        self.price = spec.raw.price
        self._tables = {}

    def tables(self, rule: StrategyRule):
        key = repr(rule)
        if key not in self._tables:
            self._tables[key] = build_tables(self.sol, rule, self.price)
        return self._tables[key]

    def _block(self, tab, seed, b, P, x0):
        grid = self.grid
        ev = sample_block(self.spec, grid, seed, b, P)
        cell = np.minimum((ev.time / grid.h).astype(np.int64), grid.steps - 1)
        theta = (ev.time - grid.times[cell]) / grid.h
        S = None
        if tab.layout.stochastic:
            S = self.price.sample(grid.h, price_normals(seed, b, P, grid.steps, self.spec.n))
        fn = kernels.get("sim_chunk", self.backend)
        guard = GUARD * (1.0 + float(np.max(np.abs(x0))))
        out = fn(tab, ev.ptr, cell, theta, ev.kind, ev.sec, ev.mark, x0,
                 S if S is not None else np.zeros((0, 0, 0)), self.diag_nodes, guard)
        out["digest"] = ev.digest()
        out["Sd"] = S[:, self.diag_nodes] if S is not None else None
        return out

    def run(self, rule: StrategyRule, n_paths: int, seed: int, x0=None) -> SimResult:
        if seed is None:
            raise ValueError("a seed is required")
        x0 = self.spec.x0 if x0 is None else np.broadcast_to(np.asarray(x0, dtype=float), (self.spec.n,))
        tab = self.tables(rule)
        nb = -(-n_paths // BLOCK)
        sizes = [min(BLOCK, n_paths - b * BLOCK) for b in range(nb)]
        if self.workers > 1 and nb > 1:
            with ProcessPoolExecutor(max_workers=self.workers) as ex:
                futs = [ex.submit(_run_block, self, tab, seed, b, sizes[b], x0) for b in range(nb)]
                outs = [f.result() for f in futs]
        else:
            outs = [self._block(tab, seed, b, sizes[b], x0) for b in range(nb)]
        cat = lambda key: np.concatenate([o[key] for o in outs], axis=0)
        acc = cat("acc")
        n = self.spec.n
        names = J_TERMS + RAW_TERMS
        terms = {k: acc[:, j].copy() for j, k in enumerate(names)}
        terms["pen"] = terms["pen"] + cat("term_J")
        terms["rpen"] = terms["rpen"] + cat("term_raw")
        terms["spread"] = cat("spread")
        terms["darkraw"] = cat("darkraw")
        base = len(names)
        import hashlib

        dig = hashlib.sha256("".join(o["digest"] for o in outs).encode()).hexdigest()
        beta = self.spec.raw.beta
        return SimResult(
            label=rule.name, seed=seed, n_paths=n_paths, x0=np.array(x0), terms=terms,
            X_T=cat("X_T"), sumz=cat("sumz"), ncust=cat("ncust"), nfill=cat("nfill"),
            sumdelta=cat("sumdelta"), int_pi=acc[:, base:base + n], int_lam_delta=acc[:, base + n:base + 2 * n],
            comp_phi=self.comp_phi, comp_lam=self.comp_lam, diag_nodes=self.diag_nodes,
            Xd=cat("Xd"), Jd=cat("Jd"), Sd=None if outs[0]["Sd"] is None else cat("Sd"),
            aborted=cat("aborted"), spread_revenue=cat("spread_revenue"), event_digest=dig, half_beta_x=float(0.5 * x0 @ beta @ x0),
            meta={"backend": kernels.BACKEND if self.backend is None else self.backend})

    # -- value function at nodes -------------------------------------------------
    def value_at_nodes(self, X, S=None):
        """V(t_k, X) for X of shape (P, D, n) at the diagnostic nodes."""
        k = self.diag_nodes
        V2 = self.sol.v2.values[k]
        V1 = self.sol.v1.values[k]
        if self.sol.v1.Q is not None and S is not None:
            V1 = V1[None] + np.einsum("dij,pdj->pdi", self.sol.v1.Q[k], S - self.sol.v1.level)
        else:
            V1 = np.broadcast_to(V1, X.shape)
        V0 = self.sol.v0.values[k]
        return np.einsum("pdi,dij,pdj->pd", X, V2, X) + 2.0 * np.einsum("pdi,pdi->pd", X, V1) + V0


def _run_block(sim, tab, seed, b, P, x0):
    return sim._block(tab, seed, b, P, x0)


def estimate_cost(spec_or_sim, rule: StrategyRule, n_paths: int, seed: int, x0=None, **kw) -> CostEstimate:
    sim = spec_or_sim if isinstance(spec_or_sim, Simulator) else Simulator(spec_or_sim, **kw)
    return sim.run(rule, n_paths, seed, x0).cost("J")


def estimate_raw_cost(spec_or_sim, rule: StrategyRule, n_paths: int, seed: int, x0=None, **kw) -> CostEstimate:
    sim = spec_or_sim if isinstance(spec_or_sim, Simulator) else Simulator(spec_or_sim, **kw)
    return sim.run(rule, n_paths, seed, x0).cost("raw")


def paired_difference(a, b):
    """Mean and standard error of the per-path difference of two arrays."""
    return _mean_se(np.asarray(a) - np.asarray(b))
