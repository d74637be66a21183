"""Random and fixed model configurations shared by the tests."""

from __future__ import annotations

from pathlib import Path

import numpy as np

from mmstrat.model.config import load_config
from mmstrat.model.spec import build_model

CONFIGS = Path(__file__).resolve().parent.parent / "configs"


def config(name):
    return load_config(CONFIGS / f"{name}.toml")


def spec_of(name, **model):
    cfg = config(name)
    cfg["model"].update(model)
    return build_model(cfg)


def base(n=1, steps=400, horizon=1.0, **coef):
    cfg = {"model": {"n": n, "horizon": horizon, "steps": steps, "x0": [0.0] * n},
           "coefficients": {"M": 1.0, "lambda": 1.0, "eta_tilde": 1.0, "gamma_tilde": 0.0,
                            "xi_tilde": 1.0, "beta": 0.0, "b": 0.0, "l": 0.0},
           "price": {"model": "deterministic", "level": 0.0}}
    cfg["coefficients"].update(coef)
    return cfg


def _pc(rng, lo, hi, breaks):
    vals = rng.uniform(lo, hi, size=len(breaks) + 1)
    if not breaks:
        return float(vals[0])
    return {"form": "piecewise_constant", "breaks": list(breaks), "values": vals.tolist()}


def random_scalar(rng, steps=400, flows=True, pc=True):
    """Valid single-security config with piecewise-constant coefficients on grid nodes."""
    T = float(rng.choice([0.5, 1.0, 2.0]))
    breaks = sorted(rng.choice(np.arange(1, steps), size=2, replace=False) * T / steps) if pc else []
    beta = float(rng.uniform(0.0, 0.4))
    cfg = base(steps=steps, horizon=T,
               M=_pc(rng, 0.2, 2.0, breaks), **{"lambda": _pc(rng, 0.1, 3.0, breaks)},
               eta_tilde=_pc(rng, 0.1, 2.0, breaks), gamma_tilde=_pc(rng, 0.0, 2.0, breaks),
               xi_tilde=float(rng.uniform(beta / 2 + 0.05, 5.0)), beta=beta,
               b=_pc(rng, 0.0, 0.1, breaks), l=_pc(rng, -0.05, 0.05, breaks))
    cfg["price"] = {"model": "deterministic", "level": _pc(rng, 0.5, 20.0, breaks)}
    cfg["model"]["x0"] = [float(rng.uniform(-2, 2))]
    if flows:
        a = float(rng.uniform(0.05, 0.5))
        cfg["flow"] = [{"support": [[-2.0, -a], [a, 1.5]], "shape": str(rng.choice(["uniform", "exponential"])),
                        "scale": 0.7, "rate": _pc(rng, 0.5, 6.0, breaks)}]
    return cfg


def _spd(rng, n, lo, hi):
    Q, _ = np.linalg.qr(rng.normal(size=(n, n)))
    return (Q * rng.uniform(lo, hi, size=n)) @ Q.T


def random_matrix(rng, n=3, steps=300):
    """Valid n-security config with full symmetric matrices."""
    beta = np.diag(rng.uniform(0.0, 0.3, size=n))
    cfg = base(n=n, steps=steps,
               M=_spd(rng, n, 0.3, 2.0).tolist(), **{"lambda": rng.uniform(0.1, 2.0, n).tolist()},
               eta_tilde=rng.uniform(0.2, 2.0, n).tolist(), gamma_tilde=_spd(rng, n, 0.0, 1.5).tolist(),
               xi_tilde=(_spd(rng, n, 0.1, 3.0) + beta).tolist(), beta=np.diag(beta).tolist())
    return cfg


def build(cfg, validate=True):
    return build_model(cfg, validate_model=validate)
