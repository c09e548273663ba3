"""Discretized per-tile pruning and the magnitude / structured baselines."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .tiling import LayerMatrix, TileGrid, check_tile_size, from_tiles

GROUPINGS = ("column", "row", "tile")


def target_sparsity(x: int) -> float:
    """Sparsity the least sparse column needs to drop ``x`` ADC bits."""
    if x < 0:
        raise ValueError("bit reduction must be >= 0")
    return 1.0 - 2.0 ** (-x)


class SparsityLevelSet:
    """ADC-attuned sparsity levels for tile size ``n``.

    Levels ``1 - 2**-x`` for ``x = 0..log2(n)`` followed by full removal
    (``1.0``). ``keep_counts`` holds the per-column survivors of each level.
    """

    def __init__(self, n: int):
        self.n = check_tile_size(n)
        self.max_reduction = int(math.log2(self.n))
        xs = range(self.max_reduction + 1)
        self.levels = np.array([target_sparsity(x) for x in xs] + [1.0])
        self.keep_counts = np.array([self.n >> x for x in xs] + [0], dtype=np.int64)

    def __len__(self):
        return len(self.levels)

    def __iter__(self):
        return iter(self.levels.tolist())

    @property
    def removed_index(self) -> int:
        return len(self.levels) - 1

    def bits(self, index: int, full_bits: int | None = None) -> int:
        """ADC bits for a tile pruned to ``levels[index]``."""
        full = self.max_reduction if full_bits is None else full_bits
        if index == self.removed_index:
            return 0
        return max(full - index, 0)

    def __repr__(self):
        return f"SparsityLevelSet(n={self.n}, levels={self.levels.tolist()})"


def discretize_lsc(fraction: float, levels: SparsityLevelSet) -> int:
    """Index of the level closest to ``fraction``; ties go to the higher level."""
    if not 0.0 <= fraction <= 1.0:
        raise ValueError(f"sparsity fraction must lie in [0, 1], got {fraction}")
    d = np.abs(levels.levels - fraction)
    return int(len(d) - 1 - np.argmin(d[::-1]))


def layer_threshold(values, allowed_ratio: float, mask=None) -> float:
    """Magnitude below which a weight is identified for removal.

    The ``allowed_ratio`` quantile of ``|w|`` over currently unmasked weights;
    weights equal to the threshold are kept.
    """
    if not 0.0 <= allowed_ratio < 1.0:
        raise ValueError(f"allowed ratio must lie in [0, 1), got {allowed_ratio}")
    if isinstance(values, LayerMatrix):
        values = values.values
    mag = np.abs(np.asarray(values))
    if mask is not None:
        mag = mag[np.asarray(mask, dtype=bool)]
    mag = np.sort(mag, axis=None)
    if mag.size == 0:
        raise ValueError("cannot threshold an empty layer")
    if allowed_ratio == 0.0:
        return 0.0
    k = min(math.ceil(allowed_ratio * mag.size - 1e-9), mag.size - 1)
    return float(mag[k])


def prune_tile(tile, tau: float, levels: SparsityLevelSet, structural=None):
    """Prune one tile to a discretized, balanced sparsity level.

    Returns ``(mask, level_index)``; ``mask`` is True where a weight survives.
    """
    tile = np.asarray(tile)
    if structural is None:
        structural = np.zeros(tile.shape, dtype=bool)
    mask, idx = kernels.prune_tiles(
        tile[None], np.asarray(structural)[None], tau, levels.keep_counts, levels.levels
    )
    return mask[0], int(idx[0])


@dataclass
class LayerPlan:
    allowed_ratio: float
    threshold: float | None
    level_index: list[int] = field(default_factory=list)
    keep_count: list[int] = field(default_factory=list)


@dataclass
class PrunePlan:
    method: str
    tile_size: int
    layers: dict[str, LayerPlan] = field(default_factory=dict)

    def to_dict(self):
        return {
            "method": self.method,
            "tile_size": self.tile_size,
            "layers": {
                name: {
                    "allowed_ratio": p.allowed_ratio,
                    "threshold": p.threshold,
                    "level_index": p.level_index,
                    "keep_count": p.keep_count,
                }
                for name, p in self.layers.items()
            },
        }


def prune_grid(grid: TileGrid, tau: float, levels: SparsityLevelSet | None = None):
    """Per-tile pruning of a whole grid (mask already on the grid is honoured).

    Returns ``(mask_matrix, level_index)`` with ``mask_matrix`` shaped like the
    unpadded layer.
    """
    levels = levels or SparsityLevelSet(grid.tile_size)
    tiles = grid.masked().flat()
    mask, idx = kernels.prune_tiles(
        tiles, grid.flat_structural(), tau, levels.keep_counts, levels.levels
    )
    return from_tiles(mask, grid.height, grid.width), idx


def prune_unstructured(m, allowed_ratio: float, mask=None) -> np.ndarray:
    """Layer-wise magnitude pruning: keep ``|w| >= tau``."""
    values = m.values if isinstance(m, LayerMatrix) else np.asarray(m)
    tau = layer_threshold(values, allowed_ratio, mask)
    keep = np.abs(values) >= tau
    if mask is not None:
        keep &= np.asarray(mask, dtype=bool)
    return keep


def group_norms(tiles: np.ndarray, grouping: str) -> np.ndarray:
    """L2 norm of every group in a ``(T, n, n)`` batch, shaped per grouping."""
    sq = np.square(tiles.astype(np.float64))
    if grouping == "column":
        return np.sqrt(sq.sum(axis=1))  # (T, n) over columns
    if grouping == "row":
        return np.sqrt(sq.sum(axis=2))  # (T, n) over rows
    if grouping == "tile":
        return np.sqrt(sq.sum(axis=(1, 2)))  # (T,)
    raise ValueError(f"grouping must be one of {GROUPINGS}, got {grouping!r}")


def _group_sizes(structural: np.ndarray, grouping: str) -> np.ndarray:
    live = ~structural
    if grouping == "column":
        return live.sum(axis=1)
    if grouping == "row":
        return live.sum(axis=2)
    return live.sum(axis=(1, 2))


def _expand(group_keep: np.ndarray, grouping: str, n: int) -> np.ndarray:
    if grouping == "column":
        return np.repeat(group_keep[:, None, :], n, axis=1)
    if grouping == "row":
        return np.repeat(group_keep[:, :, None], n, axis=2)
    return np.broadcast_to(group_keep[:, None, None], (group_keep.shape[0], n, n)).copy()


def prune_structured(grid: TileGrid, grouping: str, allowed_ratio: float) -> np.ndarray:
    """Remove the weakest crossbar columns, rows or tiles of one layer.

    Groups are ranked by L2 norm (ties by position) and removed until at
    least ``allowed_ratio`` of the layer's weights are gone.
    """
    if not 0.0 <= allowed_ratio <= 1.0:
        raise ValueError(f"allowed ratio must lie in [0, 1], got {allowed_ratio}")
    n = grid.tile_size
    tiles = grid.masked().flat()
    structural = grid.flat_structural()
    norms = group_norms(tiles, grouping).ravel()
    sizes = _group_sizes(structural, grouping).ravel()
    keep = np.ones(norms.shape, dtype=bool)
    target = allowed_ratio * grid.height * grid.width
    removed = 0
    for g in np.argsort(norms, kind="stable"):
        if removed >= target - 1e-9:
            break
        if sizes[g] == 0:
            continue
        keep[g] = False
        removed += sizes[g]
    tile_keep = _expand(keep.reshape(norms.shape if grouping == "tile" else (-1, n)), grouping, n)
    tile_keep &= grid.flat_mask() & ~structural
    return from_tiles(tile_keep, grid.height, grid.width)


def apply_mask(values: np.ndarray, mask: np.ndarray) -> np.ndarray:
    return np.where(mask, values, 0).astype(values.dtype, copy=False)
