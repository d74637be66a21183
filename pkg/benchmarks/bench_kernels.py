"""Compare the compiled kernels with the numpy fallback.

    python3 benchmarks/bench_kernels.py [--paths 20000] [--repeat 3]

Times the Monte Carlo chunk kernel (deterministic and OU price configs) and
the PDE march, and reports the largest output difference between backends.
"""

from __future__ import annotations

import argparse
import time
from pathlib import Path

import numpy as np

from mmstrat import kernels
from mmstrat.model.config import load_config
from mmstrat.model.spec import build_model
from mmstrat.oracle import solve_pde_1d
from mmstrat.simulate import Simulator, perturbed

CONFIGS = Path(__file__).resolve().parent.parent / "configs"


def best_of(fn, repeat):
    best, out = np.inf, None
    for _ in range(repeat):
        t0 = time.perf_counter()
        out = fn()
        best = min(best, time.perf_counter() - t0)
    return best, out


def bench_sim(name, paths, repeat):
    spec = build_model(load_config(CONFIGS / f"{name}.toml"))
    rule = perturbed(scale=1.1)
    res = {}
    for b in kernels.available_backends():
        sim = Simulator(spec, backend=b)
        sim.tables(rule)  # exclude table construction
        res[b] = best_of(lambda: sim.run(rule, paths, 1), repeat)
    return res, lambda r: float(np.max(np.abs(r.J - res["python"][1].J)))


def bench_pde(nodes, steps, repeat):
    spec = build_model(load_config(CONFIGS / "factor.toml"))
    res = {b: best_of(lambda: solve_pde_1d(spec, 0.2, nodes=nodes, steps=steps, backend=b), repeat)
           for b in kernels.available_backends()}
    return res, lambda r: float(np.max(np.abs(r.v0 - res["python"][1].v0)))


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--paths", type=int, default=20_000)
    ap.add_argument("--nodes", type=int, default=801)
    ap.add_argument("--pde-steps", type=int, default=4000)
    ap.add_argument("--repeat", type=int, default=3)
    a = ap.parse_args()
    cases = [(f"sim_chunk default ({a.paths} paths)", bench_sim("default", a.paths, a.repeat)),
             (f"sim_chunk spread/OU ({a.paths} paths)", bench_sim("spread", a.paths, a.repeat)),
             (f"pde_march ({a.nodes} nodes x {a.pde_steps} steps)", bench_pde(a.nodes, a.pde_steps, a.repeat))]
    print(f"{'kernel':<42}{'python s':>10}{'cython s':>10}{'speedup':>9}{'max |diff|':>12}")
    for label, (res, diff) in cases:
        tp = res["python"][0]
        if "cython" in res:
            tc = res["cython"][0]
            print(f"{label:<42}{tp:>10.3f}{tc:>10.3f}{tp / tc:>9.1f}{diff(res['cython'][1]):>12.1e}")
        else:
            print(f"{label:<42}{tp:>10.3f}{'n/a':>10}{'':>9}{'':>12}")


if __name__ == "__main__":
    main()
