"""Customer-order and dark-pool event streams.

Paths are grouped in fixed blocks of :data:`BLOCK` paths.  Block ``j`` draws
from a Philox stream keyed by ``(seed, j)``, so every path's events depend
only on the seed and the path index, never on worker scheduling or on the
strategy being simulated (common random numbers).

Times are produced by thinning a homogeneous Poisson stream whose rate is
the horizon-wide maximum of the cell-constant intensity; candidates are
accepted with probability ``rate(cell)/max``.  This is exact for
piecewise-constant intensities.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass

import numpy as np

BLOCK = 1024
CUSTOMER, FILL = 0, 1
PRICE_STREAM = 1 << 62
_MAX_REDRAW = 8


def _gen(seed: int, stream: int) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(key=[np.uint64(seed), np.uint64(stream)]))


@dataclass(frozen=True, eq=False)
class EventBlock:
    """Events of ``n_paths`` consecutive paths in CSR layout, sorted by (path, time)."""

    first_path: int
    n_paths: int
    ptr: np.ndarray  # (n_paths + 1,)
    time: np.ndarray
    kind: np.ndarray  # int8: 0 customer order, 1 dark-pool fill
    sec: np.ndarray  # int64
    mark: np.ndarray  # customer mark z; 0 for fills

    def digest(self) -> str:
        h = hashlib.sha256()
        for a in (self.ptr, self.time, self.kind, self.sec, self.mark):
            h.update(np.ascontiguousarray(a).tobytes())
        return h.hexdigest()

    def for_path(self, p):
        s, e = self.ptr[p], self.ptr[p + 1]
        return [(float(self.time[j]), int(self.kind[j]), int(self.sec[j]), float(self.mark[j]))
                for j in range(s, e)]


def intensity_cells(spec, grid):
    """Cell-constant customer and dark-pool intensities, each (N, n)."""
    cust = np.stack([f.rate.cell_values(grid)[:, 1] for f in spec.flows], axis=-1)
    dark = spec.raw.lam.cell_values(grid)[:, 1] if spec.raw.lam.time_only else None
    if dark is None:
        raise ValueError("dark-pool intensity must be time-only for simulation")
    return cust, dark


def _thin(rng, rate_cells, grid, P):
    """Accepted event times per path for one cell-constant intensity."""
    rmax = float(rate_cells.max()) if rate_cells.size else 0.0
    T = grid.horizon
    counts = rng.poisson(rmax * T, size=P) if rmax > 0 else np.zeros(P, dtype=np.int64)
    tot = int(counts.sum())
    t = rng.random(tot) * T
    u = rng.random(tot)
    owner = np.repeat(np.arange(P), counts)
    if tot:
        k = np.minimum((t / grid.h).astype(np.int64), grid.steps - 1)
        keep = u * rmax < rate_cells[k]
    else:
        keep = np.zeros(0, dtype=bool)
    return owner[keep], t[keep]


def sample_block(spec, grid, seed: int, block: int, n_paths: int | None = None) -> EventBlock:
    """Events for block ``block`` (paths ``block*BLOCK ...``)."""
    P = BLOCK if n_paths is None else n_paths
    cust, dark = intensity_cells(spec, grid)
    n = spec.n
    for attempt in range(_MAX_REDRAW):
        rng = _gen(seed, block + (attempt << 40))
        owners, times, kinds, secs, marks = [], [], [], [], []
        for i in range(n):
            o, t = _thin(rng, cust[:, i], grid, BLOCK)
            up, uv = rng.random(t.size), rng.random(t.size)
            z = spec.flows[i].sample_marks(up, uv)
            owners.append(o); times.append(t); kinds.append(np.full(t.size, CUSTOMER, np.int8))
            secs.append(np.full(t.size, i)); marks.append(z)
        for i in range(n):
            o, t = _thin(rng, dark[:, i], grid, BLOCK)
            owners.append(o); times.append(t); kinds.append(np.full(t.size, FILL, np.int8))
            secs.append(np.full(t.size, i)); marks.append(np.zeros(t.size))
        owner = np.concatenate(owners)
        time = np.concatenate(times)
        kind = np.concatenate(kinds)
        sec = np.concatenate(secs).astype(np.int64)
        mark = np.concatenate(marks)
        keep = owner < P
        owner, time, kind, sec, mark = owner[keep], time[keep], kind[keep], sec[keep], mark[keep]
        order = np.lexsort((time, owner))
        owner, time, kind, sec, mark = owner[order], time[order], kind[order], sec[order], mark[order]
        same = (owner[1:] == owner[:-1]) & (time[1:] == time[:-1])
        if not same.any():
            break
    else:  # pragma: no cover - probability zero
        raise RuntimeError("could not draw an event stream without simultaneous events")
    ptr = np.zeros(P + 1, dtype=np.int64)
    np.add.at(ptr, owner + 1, 1)
    ptr = np.cumsum(ptr)
    return EventBlock(first_path=block * BLOCK, n_paths=P, ptr=ptr, time=time, kind=kind, sec=sec, mark=mark)


def price_normals(seed: int, block: int, P: int, steps: int, n: int):
    """Standard normals for exact OU price transitions of one block."""
    # always draw a full block so a path's normals do not depend on n_paths
    return _gen(seed, PRICE_STREAM + block).standard_normal((BLOCK, steps, n))[:P]


def sample_events(spec, seed: int, path: int = 0, grid=None):
    """Event list ``[(time, kind, security, mark), ...]`` of a single path."""
    grid = grid or spec.grid
    blk = sample_block(spec, grid, seed, path // BLOCK)
    return blk.for_path(path % BLOCK)
