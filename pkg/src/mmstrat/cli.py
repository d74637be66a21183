"""Command-line entry point.

Exit codes: 0 success, 2 configuration or assumption failure, 3 numerical
failure, 64 usage error.  Every run writes CSV tables and ``run_manifest.json``
into its run directory (``--out``, else ``$MMSTRAT_OUT/<name>``, else
``runs/<name>``).
"""

from __future__ import annotations

import argparse
import copy
import csv
import json
import os
import sys
import time
import warnings
from pathlib import Path

import numpy as np

from . import __version__, kernels
from .errors import AssumptionViolation, ConfigError, NumericalError
from .model.config import config_hash, load_config

EXIT_OK, EXIT_INVALID, EXIT_NUMERICAL, EXIT_USAGE = 0, 2, 3, 64
EXPERIMENTS = ("optimality", "equivalence", "penalty-sweep", "spread-sweep", "martingale")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(f"{self.prog}: error: {message}")


# -- output helpers ----------------------------------------------------------------

def _fmt(v):
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return format(float(v), ".17g")
    return str(v)


def write_csv(path: Path, rows, columns=None):
    """UTF-8 CSV with a header row; floats with 17 significant digits."""
    columns = columns or (list(rows[0].keys()) if rows else [])
    with path.open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(columns)
        for r in rows:
            w.writerow([_fmt(r[c]) for c in columns])


def _jsonable(v):
    if isinstance(v, dict):
        return {k: _jsonable(x) for k, x in v.items()}
    if isinstance(v, (list, tuple)):
        return [_jsonable(x) for x in v]
    if isinstance(v, np.ndarray):
        return _jsonable(v.tolist())
    if isinstance(v, (np.bool_,)):
        return bool(v)
    if isinstance(v, np.integer):
        return int(v)
    if isinstance(v, (float, np.floating)):
        v = float(v)
        return v if np.isfinite(v) else str(v)
    return v


class Run:
    """Run directory plus manifest bookkeeping."""

    def __init__(self, args, config, name):
        self.args = args
        self.config = config
        self.hash = config_hash(config)
        seed = getattr(args, "seed", None)
        default = f"{name}-{self.hash[:12]}" + (f"-s{seed}" if seed is not None else "")
        root = Path(os.environ.get("MMSTRAT_OUT", "runs"))
        self.dir = Path(args.out) if args.out else root / default
        self.dir.mkdir(parents=True, exist_ok=True)
        self.name = name
        self.files = []
        self.summary = {}
        self.t0 = time.perf_counter()

    def table(self, fname, rows, columns=None):
        write_csv(self.dir / fname, rows, columns)
        self.files.append(fname)

    def finish(self, status="ok"):
        a = self.args
        manifest = {
            "subcommand": self.name,
            "status": status,
            "config_hash": self.hash,
            "config": self.config,
            "seed": getattr(a, "seed", None),
            "paths": getattr(a, "paths", None),
            "grid_steps": self.config.get("model", {}).get("steps"),
            "horizon": self.config.get("model", {}).get("horizon", 1.0),
            "workers": getattr(a, "workers", 1),
            "kernel_backend": kernels.BACKEND,
            "version": __version__,
            "argv": a.argv,
            "outputs": self.files,
            "summary": self.summary,
            "wall_seconds": time.perf_counter() - self.t0,
        }
        with (self.dir / "run_manifest.json").open("w", encoding="utf-8") as fh:
            json.dump(_jsonable(manifest), fh, indent=2, sort_keys=True)
            fh.write("\n")


def _config(args):
    cfg = load_config(args.config)
    if getattr(args, "grid_steps", None):
        cfg = copy.deepcopy(cfg)
        cfg.setdefault("model", {})["steps"] = int(args.grid_steps)
    return cfg


def _spec(cfg, validate=True):
    from .model.spec import build_model

    return build_model(cfg, validate_model=validate)


def _require_seed(args):
    if args.seed is None:
        raise UsageError(f"{args.command}: --seed is required for stochastic runs")
    if args.paths is None or args.paths < 2:
        raise UsageError(f"{args.command}: --paths N (N >= 2) is required")


# -- subcommands --------------------------------------------------------------------

def cmd_validate(args):
    from .model.validate import validate

    cfg = _config(args)
    run = Run(args, cfg, "validate")
    spec = _spec(cfg, validate=False)
    sweep_c = cfg.get("experiment", {}).get("penalty_sweep", {}).get("c")
    rep = validate(spec, check_c=args.check_c, c_override=sweep_c)
    rows = [{"assumption": c.assumption, "check": c.description, "passed": c.passed,
             "message": c.message, "where": c.where} for c in rep.checks]
    run.table("validation.csv", rows, ["assumption", "check", "passed", "message", "where"])
    for line in rep.lines():
        print(line)
    run.summary = {"ok": rep.ok, "failed": [c.assumption for c in rep.failures()]}
    run.finish("ok" if rep.ok else "invalid")
    return EXIT_OK if rep.ok else EXIT_INVALID


def _node_rows(times, **cols):
    rows = []
    for k, t in enumerate(times):
        r = {"t": t}
        for name, arr in cols.items():
            a = np.asarray(arr[k])
            if a.ndim == 0:
                r[name] = float(a)
            else:
                for idx in np.ndindex(a.shape):
                    r[name + "_" + "".join(str(i) for i in idx)] = float(a[idx])
        rows.append(r)
    return rows


def cmd_solve_v2(args):
    from .riccati import solve_v2, v2_bounds

    cfg = _config(args)
    run = Run(args, cfg, "solve-v2")
    spec = _spec(cfg)
    cells = spec.cells()
    v2 = solve_v2(cells)
    cols = {"V2": v2.values}
    if spec.n == 1:
        lo, up = v2_bounds(cells, args.bound_eps)
        cols.update(lower_bound=lo, upper_bound=up)
    run.table("v2.csv", _node_rows(cells.grid.times, **cols))
    run.summary = {"V2_0": v2.values[0]}
    run.finish()
    return EXIT_OK


def cmd_solve_affine(args):
    from .affine import solve_affine

    cfg = _config(args)
    run = Run(args, cfg, "solve-affine")
    spec = _spec(cfg)
    sol = solve_affine(spec, method=args.method)
    F = np.concatenate([sol.F[:, 0], sol.F[-1:, 2]])  # feedback at grid nodes
    run.table("affine.csv", _node_rows(sol.cells.grid.times, V2=sol.v2.values, V1=sol.v1.values,
                                        V0=sol.v0.values, F=F))
    run.summary = {"value_at_x0": float(sol.value(0.0, spec.x0)), "method": args.method}
    print(f"V(0, x0) = {run.summary['value_at_x0']:.17g}")
    run.finish()
    return EXIT_OK


def _factor_spec(cfg, args):
    spec = _spec(cfg)
    if spec.factor is None:
        raise ConfigError("this subcommand needs a [factor] section")
    eps = args.epsilon if args.epsilon is not None else spec.factor.epsilon
    return spec, float(eps)


def cmd_expand(args):
    from .expansion import FactorCoefficients, approx_value, solve_expansion

    cfg = _config(args)
    run = Run(args, cfg, "expand")
    spec, eps = _factor_spec(cfg, args)
    sol = solve_expansion(FactorCoefficients(spec), spec.grid, 0.0, spec.factor.x0, order=args.order)
    rows = []
    for k, t in enumerate(sol.times):
        v = sol.V0th[0, k] + (eps ** 2 * sol.y0[0, k] if args.order == 2 else 0.0)
        r = {"t": t, "X0": sol.X0[0, k, 0], "V0": sol.V0th[0, k]}
        if args.order >= 1:
            r["y"] = sol.y[0, k, 0]
        if args.order == 2:
            r["y1"] = sol.y1[0, k, 0, 0]
            r["y0"] = sol.y0[0, k]
        r["approx_value"] = v
        rows.append(r)
    run.table("expansion.csv", rows)
    run.summary = {"epsilon": eps, "order": args.order, "approx_value": approx_value(sol, args.order, eps)}
    if args.convergence:
        from .oracle import pde_reference

        if args.order != 2:
            raise UsageError("--convergence needs --order 2")
        eps_list = sorted(args.convergence, reverse=True)
        conv = []
        for e in eps_list:
            ref = pde_reference(spec, e, nodes=args.nodes, steps=args.pde_steps)
            conv.append({"epsilon": e, "reference": ref.value, "reference_error_estimate": ref.error_estimate,
                         "error_order0": abs(approx_value(sol, 0, e) - ref.value),
                         "error_order2": abs(approx_value(sol, 2, e) - ref.value)})
        for key in ("order0", "order2"):
            err = [max(r["error_" + key], 1e-300) for r in conv]
            slope = float(np.polyfit(np.log(eps_list), np.log(err), 1)[0]) if len(conv) > 1 else float("nan")
            run.summary["slope_" + key] = slope
            for r in conv:
                r["slope_" + key] = slope
        run.table("convergence.csv", conv)
    print(f"order-{args.order} value at the anchor: {run.summary['approx_value']:.17g}")
    run.finish()
    return EXIT_OK


def cmd_oracle(args):
    from .oracle import pde_reference, solve_pde_1d

    cfg = _config(args)
    run = Run(args, cfg, "oracle")
    spec, eps = _factor_spec(cfg, args)
    g = solve_pde_1d(spec, eps, nodes=args.nodes, steps=args.pde_steps, save_every=args.save_every)
    run.table("oracle.csv", [{"t": t, "x": x, "v": v} for t, vt in zip(g.times, g.v) for x, v in zip(g.x, vt)])
    row = {"epsilon": eps, "x0": g.x0, "value": g.value_at(), "reference": float("nan"),
           "error_estimate": float("nan"), "self_difference": float("nan")}
    if args.reference:
        ref = pde_reference(spec, eps, nodes=args.nodes, steps=args.pde_steps)
        row.update(reference=ref.value, error_estimate=ref.error_estimate, self_difference=ref.self_difference)
    run.table("oracle_summary.csv", [row])
    run.summary = {k: v for k, v in row.items() if v == v}
    print(f"v(0, x0) = {run.summary.get('reference', run.summary['value']):.17g}")
    run.finish()
    return EXIT_OK


def _rule(name):
    from .simulate import strategy as st

    table = {"optimal": st.optimal(), "zero": st.zero()}
    table.update({r.name: r for r in st.perturbation_battery()})
    if name not in table:
        raise UsageError(f"unknown strategy '{name}' (choose from {', '.join(table)})")
    return table[name]


def cmd_simulate(args):
    from .simulate import Simulator
    from .simulate.events import BLOCK, sample_block

    _require_seed(args)
    cfg = _config(args)
    run = Run(args, cfg, "simulate")
    spec = _spec(cfg)
    sim = Simulator(spec, workers=args.workers)
    r = sim.run(_rule(args.strategy), args.paths, args.seed)
    rows = []
    for form in ("J", "raw"):
        c = r.cost(form)
        rows.append({"term": f"{form}:total", "mean": c.mean, "std_error": c.std_error, "n_paths": c.n_paths})
        for k, (m, se) in c.breakdown.items():
            rows.append({"term": f"{form}:{k}", "mean": m, "std_error": se, "n_paths": c.n_paths})
    for k, (m, se) in r.residuals().items():
        rows.append({"term": f"residual:{k}", "mean": m, "std_error": se, "n_paths": int(r.ok.sum())})
    run.table("cost.csv", rows, ["term", "mean", "std_error", "n_paths"])
    prow = [{"path": p, "J": r.J[p], "raw": r.raw[p], "X_T": r.X_T[p, 0] if spec.n == 1 else
             float(np.linalg.norm(r.X_T[p])), "aborted": bool(r.aborted[p])} for p in range(r.n_paths)]
    if args.per_path:
        run.table("paths.csv", prow, ["path", "J", "raw", "X_T", "aborted"])
    if args.event_log:
        ev_rows = []
        for p in range(min(args.event_log, args.paths)):
            blk = sample_block(spec, sim.grid, args.seed, p // BLOCK)
            for t, kind, i, z in blk.for_path(p % BLOCK):
                ev_rows.append({"path": p, "time": t, "type": "customer" if kind == 0 else "fill",
                                "security": i, "mark": z})
        run.table("events.csv", ev_rows, ["path", "time", "type", "security", "mark"])
    c = r.cost("J")
    run.summary = {"strategy": args.strategy, "J_mean": c.mean, "J_se": c.std_error,
                   "aborted": int(r.aborted.sum()), "event_digest": r.event_digest}
    print(f"{args.strategy}: J = {c.mean:.10g} +- {c.std_error:.3g} ({c.n_paths} paths)")
    run.finish()
    return EXIT_OK


def cmd_experiment(args):
    from .simulate import Simulator, experiments as ex

    _require_seed(args)
    cfg = _config(args)
    name = args.which
    run = Run(args, cfg, f"experiment-{name}")
    spec = _spec(cfg)
    excfg = cfg.get("experiment", {})
    if name == "optimality":
        rows, summary = ex.optimality(Simulator(spec, workers=args.workers), args.paths, args.seed)
    elif name == "equivalence":
        rows, summary = ex.equivalence(Simulator(spec, workers=args.workers), args.paths, args.seed)
    elif name == "martingale":
        every = max(1, spec.steps // args.intervals)
        rows, summary = ex.martingale_diagnostics(Simulator(spec, workers=args.workers, diag_every=every),
                                                  args.paths, args.seed)
    elif name == "penalty-sweep":
        pc = excfg.get("penalty_sweep", {})
        L = args.L or pc.get("L", [10.0, 40.0, 160.0, 640.0])
        with warnings.catch_warnings(record=True) as caught:
            warnings.simplefilter("always")
            rows, summary = ex.penalty_sweep(spec, L, args.paths, args.seed, c=pc.get("c"), workers=args.workers)
        for w in caught:
            print(f"warning: {w.message}", file=sys.stderr)
    else:
        sc = excfg.get("spread_sweep", {})
        a = args.a_hat or sc.get("a_hat", [0.0, 0.1, 0.2, 0.4])
        rows, summary = ex.spread_sweep(cfg, a, args.paths, args.seed, workers=args.workers)
    fname = name.replace("-", "_") + ".csv"
    run.table(fname, rows)
    run.summary = summary
    for r in rows:
        print(", ".join(f"{k}={_fmt(v)}" for k, v in r.items()))
    run.finish()
    return EXIT_OK


# -- parser -------------------------------------------------------------------------

def build_parser():
    p = _Parser(prog="mmstrat", description="Market-maker position management: solvers and simulation.")
    p.add_argument("--version", action="version", version=f"mmstrat {__version__}")
    sub = p.add_subparsers(dest="command", parser_class=_Parser)

    def common(sp, stochastic=False):
        sp.add_argument("--config", required=True, help="TOML model configuration")
        sp.add_argument("--grid-steps", type=int, default=None, help="override model.steps")
        sp.add_argument("--out", default=None, help="run directory (default: $MMSTRAT_OUT/<run name>)")
        sp.add_argument("--workers", type=int, default=1, help="worker processes for simulation")
        if stochastic:
            sp.add_argument("--seed", type=int, default=None, help="master seed (required)")
            sp.add_argument("--paths", type=int, default=None, help="number of Monte Carlo paths")

    sp = sub.add_parser("validate", help="check the standing assumptions")
    common(sp)
    sp.add_argument("--check-c", action="store_true", help="also check the terminal-penalty constants")
    sp.set_defaults(func=cmd_validate)

    sp = sub.add_parser("solve-v2", help="quadratic coefficient V2 on the grid")
    common(sp)
    sp.add_argument("--bound-eps", type=float, default=0.1, help="epsilon of the scalar bound pair")
    sp.set_defaults(func=cmd_solve_v2)

    sp = sub.add_parser("solve-affine", help="V2, V1, V0 for time-only coefficients")
    common(sp)
    sp.add_argument("--method", choices=("propagator", "ode", "kernel"), default="propagator")
    sp.set_defaults(func=cmd_solve_affine)

    sp = sub.add_parser("expand", help="small-diffusion expansion for a factor model")
    common(sp)
    sp.add_argument("--order", type=int, choices=(0, 1, 2), default=2)
    sp.add_argument("--epsilon", type=float, default=None)
    sp.add_argument("--convergence", type=float, nargs="+", default=None, metavar="EPS",
                    help="errors against the PDE reference at these epsilons")
    sp.add_argument("--nodes", type=int, default=801, help="PDE nodes for --convergence")
    sp.add_argument("--pde-steps", type=int, default=4000, help="PDE time steps for --convergence")
    sp.set_defaults(func=cmd_expand)

    sp = sub.add_parser("oracle", help="finite-difference reference for a one-factor model")
    common(sp)
    sp.add_argument("--epsilon", type=float, default=None)
    sp.add_argument("--nodes", type=int, default=801)
    sp.add_argument("--pde-steps", type=int, default=4000)
    sp.add_argument("--save-every", type=int, default=0, help="also write every K-th time slice")
    sp.add_argument("--reference", action="store_true", help="also run the extrapolated reference")
    sp.set_defaults(func=cmd_oracle)

    sp = sub.add_parser("simulate", help="Monte Carlo cost of one strategy")
    common(sp, stochastic=True)
    sp.add_argument("--strategy", default="optimal")
    sp.add_argument("--per-path", action="store_true", help="write paths.csv")
    sp.add_argument("--event-log", type=int, default=0, metavar="K", help="dump events of the first K paths")
    sp.set_defaults(func=cmd_simulate)

    sp = sub.add_parser("experiment", help="verification experiments")
    sp.add_argument("which", choices=EXPERIMENTS)
    common(sp, stochastic=True)
    sp.add_argument("--intervals", type=int, default=5, help="martingale: diagnostic intervals")
    sp.add_argument("--L", type=float, nargs="+", default=None, help="penalty-sweep: penalties")
    sp.add_argument("--a-hat", type=float, nargs="+", default=None, help="spread-sweep: spread multipliers")
    sp.set_defaults(func=cmd_experiment)
    return p


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if not getattr(args, "command", None):
            parser.print_help(sys.stderr)
            return EXIT_USAGE
        args.argv = argv
        return args.func(args)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return EXIT_USAGE
    except (ConfigError, AssumptionViolation) as exc:
        print(f"invalid model: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except NumericalError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
