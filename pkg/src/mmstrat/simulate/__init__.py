"""Monte Carlo simulation of the market maker under feedback strategies."""

from .engine import CostEstimate, Simulator, SimResult, estimate_cost, estimate_raw_cost, paired_difference
from .events import EventBlock, sample_block, sample_events
from .experiments import equivalence, martingale_diagnostics, optimality, penalty_sweep, spread_sweep
from .path import PathRecord, deterministic_decay, reconstruct_position, simulate_path
from .strategy import StrategyRule, custom, optimal, perturbation_battery, perturbed, zero

__all__ = [
    "CostEstimate", "EventBlock", "PathRecord", "SimResult", "Simulator", "StrategyRule", "custom",
    "deterministic_decay", "equivalence", "estimate_cost", "estimate_raw_cost", "martingale_diagnostics",
    "optimal", "optimality", "paired_difference", "penalty_sweep", "perturbation_battery", "perturbed",
    "reconstruct_position", "sample_block", "sample_events", "simulate_path", "spread_sweep", "zero",
]
