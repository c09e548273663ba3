"""Layer flattening and logical crossbar tiling.

A layer's weights become a 2-D matrix whose rows are fan-in positions and
whose columns are output units. That matrix is cut into ``n x n`` logical
tiles, zero-padding the last tile row and column.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np


@dataclass(frozen=True)
class LayerShape:
    kind: str
    fan_in: int = 0
    fan_out: int = 0
    out_channels: int = 0
    in_channels: int = 0
    kernel: int = 0

    def __post_init__(self):
        if self.kind == "conv":
            dims = (self.out_channels, self.in_channels, self.kernel)
        elif self.kind == "dense":
            dims = (self.fan_in, self.fan_out)
        else:
            raise ValueError(f"unknown layer kind {self.kind!r}")
        if min(dims) < 1:
            raise ValueError(f"{self.kind} layer dimensions must be >= 1, got {dims}")

    @classmethod
    def conv(cls, out_channels, in_channels, kernel):
        return cls("conv", out_channels=out_channels, in_channels=in_channels, kernel=kernel)

    @classmethod
    def dense(cls, fan_in, fan_out):
        return cls("dense", fan_in=fan_in, fan_out=fan_out)

    @property
    def height(self) -> int:
        if self.kind == "conv":
            return self.kernel * self.kernel * self.in_channels
        return self.fan_in

    @property
    def width(self) -> int:
        return self.out_channels if self.kind == "conv" else self.fan_out

    @property
    def dims(self) -> tuple[int, ...]:
        if self.kind == "conv":
            return (self.out_channels, self.in_channels, self.kernel)
        return (self.fan_in, self.fan_out)

    @property
    def size(self) -> int:
        return self.height * self.width


@dataclass
class LayerMatrix:
    shape: LayerShape
    values: np.ndarray
    layer_name: str = ""

    def __post_init__(self):
        if self.values.shape != (self.shape.height, self.shape.width):
            raise ValueError(
                f"matrix is {self.values.shape}, shape implies "
                f"{(self.shape.height, self.shape.width)}"
            )
        if not np.all(np.isfinite(self.values)):
            raise ValueError(f"layer {self.layer_name!r} has non-finite weights")


def flatten_layer(weights, shape: LayerShape, name: str = "") -> LayerMatrix:
    """Flatten a conv tensor ``(O, I, k, k)`` or dense matrix ``(fan_in, fan_out)``.

    Conv weight ``(o, i, r, s)`` lands at row ``i*k*k + r*k + s``, column ``o``.
    """
    w = np.asarray(weights)
    if w.size != shape.size:
        raise ValueError(
            f"{shape.kind} layer {name!r}: expected {shape.size} weights "
            f"({' x '.join(map(str, shape.dims))}), got {w.size}"
        )
    if shape.kind == "conv":
        O, I, k = shape.dims
        values = w.reshape(O, I * k * k).T.copy()
    else:
        values = w.reshape(shape.height, shape.width).copy()
    return LayerMatrix(shape, values, name)


def layer_weights(m: LayerMatrix) -> np.ndarray:
    """Inverse of :func:`flatten_layer`: native conv tensor or dense matrix."""
    if m.shape.kind == "conv":
        O, I, k = m.shape.dims
        return m.values.T.reshape(O, I, k, k).copy()
    return m.values.copy()


def check_tile_size(n: int) -> int:
    if not isinstance(n, (int, np.integer)) or n < 2 or n & (n - 1):
        raise ValueError(f"tile size must be a power of 2 >= 2, got {n!r}")
    return int(n)


def grid_dims(height: int, width: int, n: int) -> tuple[int, int]:
    return math.ceil(height / n), math.ceil(width / n)


def to_tiles(values: np.ndarray, n: int) -> np.ndarray:
    """``(H, W)`` matrix -> ``(T, n, n)`` zero-padded tiles in row-major tile order."""
    H, W = values.shape
    R, C = grid_dims(H, W, n)
    padded = np.zeros((R * n, C * n), dtype=values.dtype)
    padded[:H, :W] = values
    return padded.reshape(R, n, C, n).transpose(0, 2, 1, 3).reshape(R * C, n, n)


def from_tiles(tiles: np.ndarray, height: int, width: int) -> np.ndarray:
    n = tiles.shape[-1]
    R, C = grid_dims(height, width, n)
    full = tiles.reshape(R, C, n, n).transpose(0, 2, 1, 3).reshape(R * n, C * n)
    return np.ascontiguousarray(full[:height, :width])


def structural_tiles(height: int, width: int, n: int) -> np.ndarray:
    """Boolean ``(T, n, n)``; True marks padding cells."""
    return ~to_tiles(np.ones((height, width), dtype=bool), n)


def live_columns(height: int, width: int, n: int) -> np.ndarray:
    """Count of non-padding columns in each tile."""
    R, C = grid_dims(height, width, n)
    per_col = np.full(C, n, dtype=np.int64)
    per_col[-1] = width - (C - 1) * n
    return np.tile(per_col, R)


@dataclass(frozen=True)
class TileColumnView:
    tile: int
    column: int
    weights: np.ndarray
    structural: np.ndarray


@dataclass
class TileGrid:
    tile_size: int
    tiles: np.ndarray  # (R, C, n, n)
    structural: np.ndarray  # (R, C, n, n), True = padding
    height: int
    width: int
    shape: LayerShape | None = None
    layer_name: str = ""
    mask: np.ndarray | None = field(default=None, repr=False)  # (R, C, n, n) bool

    @property
    def pad_rows(self) -> int:
        return self.tiles.shape[0] * self.tile_size - self.height

    @property
    def pad_cols(self) -> int:
        return self.tiles.shape[1] * self.tile_size - self.width

    @property
    def n_tiles(self) -> int:
        return self.tiles.shape[0] * self.tiles.shape[1]

    def flat(self) -> np.ndarray:
        """Tiles as ``(T, n, n)`` (a view)."""
        n = self.tile_size
        return self.tiles.reshape(-1, n, n)

    def flat_structural(self) -> np.ndarray:
        n = self.tile_size
        return self.structural.reshape(-1, n, n)

    def flat_mask(self) -> np.ndarray:
        if self.mask is None:
            return ~self.flat_structural()
        return self.mask.reshape(-1, self.tile_size, self.tile_size)

    def live_columns(self) -> np.ndarray:
        return live_columns(self.height, self.width, self.tile_size)

    def column(self, t: int, c: int) -> TileColumnView:
        flat = self.flat()
        return TileColumnView(t, c, flat[t, :, c].copy(), self.flat_structural()[t, :, c].copy())

    def columns(self, t: int) -> list[TileColumnView]:
        return [self.column(t, c) for c in range(self.tile_size)]

    def masked(self) -> TileGrid:
        """Copy with the mask applied to the weights."""
        g = TileGrid(
            self.tile_size, self.tiles.copy(), self.structural, self.height, self.width,
            self.shape, self.layer_name, self.mask,
        )
        if self.mask is not None:
            g.tiles[~self.mask] = 0
        return g


def partition(m, n: int, mask=None) -> TileGrid:
    """Cut a :class:`LayerMatrix` (or bare 2-D array) into ``n x n`` tiles."""
    n = check_tile_size(n)
    if isinstance(m, LayerMatrix):
        values, shape, name = m.values, m.shape, m.layer_name
    else:
        values, shape, name = np.asarray(m), None, ""
    H, W = values.shape
    R, C = grid_dims(H, W, n)
    tiles = to_tiles(values, n).reshape(R, C, n, n)
    structural = structural_tiles(H, W, n).reshape(R, C, n, n)
    tmask = None
    if mask is not None:
        tmask = to_tiles(np.asarray(mask, dtype=bool), n).reshape(R, C, n, n)
    return TileGrid(n, tiles, structural, H, W, shape, name, tmask)


def unflatten(g: TileGrid) -> LayerMatrix | np.ndarray:
    """Exact inverse of :func:`partition`; padding is dropped.

    Returns a :class:`LayerMatrix` when the grid carries layer metadata,
    otherwise the bare 2-D array.
    """
    values = from_tiles(g.flat(), g.height, g.width)
    if g.shape is None:
        return values
    return LayerMatrix(g.shape, values, g.layer_name)


def grid_mask_matrix(g: TileGrid) -> np.ndarray:
    """The grid's mask as an ``(H, W)`` boolean matrix."""
    return from_tiles(g.flat_mask(), g.height, g.width)
