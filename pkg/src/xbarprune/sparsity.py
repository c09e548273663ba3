"""Column sparsity measures, least-sparse-column statistics and tile histograms."""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from . import kernels
from .prune import SparsityLevelSet
from .tiling import TileGrid

HOYER_EPS = kernels._numpy.HOYER_EPS


def l0_count(w) -> int:
    """Number of entries that are not exactly zero."""
    return int(np.count_nonzero(np.asarray(w)))


def hoyer_square(w) -> float:
    """Squared L1 over squared L2; 0 for the all-zero vector."""
    w = np.asarray(w, dtype=np.float64)
    s2 = float(np.dot(w, w))
    if s2 == 0.0:
        return 0.0
    a1 = float(np.abs(w).sum())
    return a1 * a1 / (s2 + HOYER_EPS)


def hoyer_square_grad(w) -> np.ndarray:
    w = np.asarray(w, dtype=np.float64)
    a1 = np.abs(w).sum()
    s2 = np.dot(w, w)
    return (2.0 * np.sign(w) * a1 * s2 - a1 * a1 * 2.0 * w) / (s2 + HOYER_EPS) ** 2


@dataclass(frozen=True)
class ColumnStat:
    l0: int
    hoyer_square: float
    sparsity_fraction: float


@dataclass(frozen=True)
class TileStat:
    columns: list[ColumnStat]
    lsc_index: int
    lsc_sparsity: float
    mean_hoyer: float


def tile_stats(tile, live: int | None = None) -> TileStat:
    """Statistics for one ``n x n`` tile (rows x columns).

    ``live`` limits the Hoyer mean to the first ``live`` columns (the rest
    being padding); the LSC is searched over all columns, padded ones being
    all-zero and hence never less sparse than a real column.
    """
    tile = np.asarray(tile)
    n = tile.shape[0]
    live = tile.shape[1] if live is None else live
    cols = []
    for c in range(tile.shape[1]):
        l0 = l0_count(tile[:, c])
        cols.append(ColumnStat(l0, hoyer_square(tile[:, c]), (n - l0) / n))
    spars = [s.sparsity_fraction for s in cols]
    lsc = int(np.argmin(spars))
    mean_h = float(np.mean([s.hoyer_square for s in cols[:live]]))
    return TileStat(cols, lsc, spars[lsc], mean_h)


def lsc_sparsity(tiles) -> np.ndarray:
    """Least-sparse-column sparsity of each tile in a ``(T, n, n)`` batch."""
    tiles = np.asarray(tiles)
    n = tiles.shape[1]
    nnz = np.count_nonzero(tiles, axis=1).max(axis=1)
    return (n - nnz) / n


@dataclass
class TileHistogram:
    labels: list[str]
    min_sparsity: list[float]
    counts: list[int]

    @property
    def total(self) -> int:
        return sum(self.counts)

    @property
    def fractions(self) -> list[float]:
        total = self.total
        return [c / total if total else 0.0 for c in self.counts]

    def fraction_at_least(self, sparsity: float) -> float:
        return sum(f for f, lo in zip(self.fractions, self.min_sparsity) if lo >= sparsity)

    def rows(self):
        for row in zip(self.labels, self.min_sparsity, self.counts, self.fractions):
            yield dict(zip(("level_label", "min_sparsity", "tile_count", "tile_fraction"), row))

    def to_csv(self, path):
        with open(path, "w", newline="") as f:
            w = csv.DictWriter(f, fieldnames=["level_label", "min_sparsity", "tile_count", "tile_fraction"])
            w.writeheader()
            for row in self.rows():
                w.writerow(row)


def _label(level: float) -> str:
    if level == 0.0:
        return "<50%"
    return f"{100 * level:.2f}%".replace(".00%", "%")


def histogram(grids: list[TileGrid], tile_size: int | None = None) -> TileHistogram:
    """Bucket every tile by the highest discretized level its LSC reaches."""
    if tile_size is None:
        tile_size = grids[0].tile_size
    levels = SparsityLevelSet(tile_size).levels
    counts = [0] * len(levels)
    for g in grids:
        if g.tile_size != tile_size:
            raise ValueError("all grids must share one tile size")
        s = lsc_sparsity(g.masked().flat())
        idx = np.searchsorted(levels, s, side="right") - 1
        for i in idx:
            counts[int(i)] += 1
    return TileHistogram([_label(v) for v in levels], list(map(float, levels)), counts)
