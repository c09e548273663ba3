"""Functional model of tiled crossbar MVM and the ADC precision bound."""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .energy import AdcProfile
from .tiling import TileGrid


@dataclass
class TiledMvmTrace:
    partials: np.ndarray  # (R, C, n): column partial sums of every tile
    output: np.ndarray

    def to_dict(self):
        R, C, _ = self.partials.shape
        return {
            "tiles": [
                {"tile_row": i, "tile_col": j, "partials": self.partials[i, j].tolist()}
                for i in range(R) for j in range(C)
            ],
            "accumulation": "per output block, tile rows summed in ascending order",
            "output": self.output.tolist(),
        }

    def to_json(self, path):
        with open(path, "w") as f:
            json.dump(self.to_dict(), f)


def tiled_mvm(grid: TileGrid, x) -> tuple[np.ndarray, TiledMvmTrace]:
    """``(masked W)^T x`` computed tile by tile, then accumulated."""
    x = np.asarray(x, dtype=np.float64)
    if x.shape != (grid.height,):
        raise ValueError(f"input has length {x.shape}, grid height is {grid.height}")
    n = grid.tile_size
    R, C = grid.tiles.shape[:2]
    xp = np.zeros(R * n)
    xp[:grid.height] = x
    tiles = grid.masked().tiles.astype(np.float64)
    partials = np.einsum("ijrc,ir->ijc", tiles, xp.reshape(R, n))
    acc = np.zeros((C, n))
    for i in range(R):
        acc += partials[i]
    out = acc.reshape(-1)[:grid.width]
    return out, TiledMvmTrace(partials, out)


@dataclass
class BoundReport:
    passed: bool
    violations: list[dict] = field(default_factory=list)
    n_tiles: int = 0

    def to_dict(self):
        return {"passed": self.passed, "n_tiles": self.n_tiles, "violations": self.violations}


def check_adc_bound(grid: TileGrid, reduction) -> BoundReport:
    """Check every column's active-cell count against its tile's budget.

    Binary abstraction: every nonzero weight is a 1 and all inputs are 1, so
    a column's partial sum is its nonzero count. ``reduction`` gives the bit
    reduction ``x_t`` per tile, or an :class:`AdcProfile` (covering exactly
    this grid) from which it is derived.
    """
    n = grid.tile_size
    if isinstance(reduction, AdcProfile):
        x = reduction.full_bits - np.asarray(reduction.bits)
    else:
        x = np.asarray(reduction)
    x = np.broadcast_to(x, (grid.n_tiles,))
    counts = np.count_nonzero(grid.masked().flat(), axis=1)  # (T, n)
    budget = n / 2.0 ** x
    worst = counts.max(axis=1)
    bad = np.nonzero(worst > budget)[0]
    violations = [
        {"tile": int(t), "max_active": int(worst[t]), "budget": float(budget[t])} for t in bad
    ]
    return BoundReport(len(bad) == 0, violations, grid.n_tiles)
