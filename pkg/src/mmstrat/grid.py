"""Uniform time grid shared by every solver, plus small numerical helpers.

Cell ``k`` is ``[t_k, t_{k+1}]``.  Positions inside a cell are given by a
fraction ``theta`` in ``[0, 1]``.  Coefficients are always evaluated with cell
semantics: a piecewise-constant form whose breakpoint sits on ``t_k`` takes its
in-cell value at both ends of the cell.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np

# Stage positions used by classical RK4 inside one cell.
STAGE_THETAS = np.array([0.0, 0.5, 1.0])


@dataclass(frozen=True)
class TimeGrid:
    horizon: float
    steps: int

    def __post_init__(self):
        if not self.horizon > 0:
            raise ValueError("horizon must be positive")
        if self.steps < 1:
            raise ValueError("steps must be >= 1")

    @property
    def h(self) -> float:
        return self.horizon / self.steps

    @cached_property
    def times(self) -> np.ndarray:
        return np.linspace(0.0, self.horizon, self.steps + 1)

    def cell_times(self, theta) -> np.ndarray:
        """Times ``t_k + theta*h`` for every cell; ``theta`` scalar or (N,)."""
        return self.times[:-1] + np.asarray(theta, dtype=float) * self.h

    def locate(self, t):
        """Return (cell index, theta) for time(s) ``t``; t = T maps to the last cell."""
        t = np.asarray(t, dtype=float)
        k = np.floor(t / self.h).astype(np.int64)
        k = np.clip(k, 0, self.steps - 1)
        theta = (t - self.times[k]) / self.h
        return k, theta

    def index_of(self, t: float) -> int:
        """Grid index of a time that must coincide with a node."""
        k = int(round(t / self.h))
        if abs(self.times[k] - t) > 1e-9 * max(1.0, self.horizon):
            raise ValueError(f"time {t} is not a grid node")
        return k


def hermite(y0, y1, d0, d1, h, theta):
    """Cubic Hermite interpolation on one cell.

    ``d0``/``d1`` are time derivatives at the two ends; broadcasting follows
    numpy rules with ``theta`` in front.
    """
    th = np.asarray(theta, dtype=float)
    th2 = th * th
    th3 = th2 * th
    h00 = 2 * th3 - 3 * th2 + 1
    h10 = th3 - 2 * th2 + th
    h01 = -2 * th3 + 3 * th2
    h11 = th3 - th2
    return h00 * y0 + h10 * h * d0 + h01 * y1 + h11 * h * d1


def lagrange3(theta):
    """Quadratic Lagrange weights for nodes 0, 1/2, 1 evaluated at ``theta``.

    Returns an array of shape ``theta.shape + (3,)``.
    """
    th = np.asarray(theta, dtype=float)
    w0 = 2.0 * (th - 0.5) * (th - 1.0)
    w1 = -4.0 * th * (th - 1.0)
    w2 = 2.0 * th * (th - 0.5)
    return np.stack([w0, w1, w2], axis=-1)


def cumulative_simpson_cells(f0, fm, f1, h):
    """Integral from every node to the end of the grid, Simpson per cell.

    Args:
        f0, fm, f1: integrand at the start, midpoint and end of each cell,
            arrays of shape (N, ...).
        h: cell width.

    Returns:
        Array of shape (N+1, ...) with ``out[k] = integral over [t_k, T]``.
    """
    pieces = (h / 6.0) * (f0 + 4.0 * fm + f1)
    out = np.zeros((pieces.shape[0] + 1,) + pieces.shape[1:])
    out[:-1] = np.cumsum(pieces[::-1], axis=0)[::-1]
    return out
