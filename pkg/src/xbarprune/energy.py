"""ADC precision assignment and normalized ADC energy."""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field

import numpy as np

from .tiling import TileGrid, check_tile_size

ALL_PRUNED = "all-pruned"


def full_precision(n: int) -> int:
    return int(math.log2(check_tile_size(n)))


def assign_bits(tiles, full_bits: int | None = None) -> np.ndarray:
    """ADC bits per tile from the nonzero count of its least sparse column.

    ``tiles`` is one ``(n, n)`` tile or a ``(T, n, n)`` batch of pruned
    weights. A column with ``nnz <= n * 2**-x`` lets the shared ADC drop ``x``
    bits; tiles with at most one nonzero per column cost nothing.
    """
    tiles = np.asarray(tiles)
    single = tiles.ndim == 2
    if single:
        tiles = tiles[None]
    n = tiles.shape[1]
    xmax = full_precision(n)
    full = xmax if full_bits is None else full_bits
    nnz = np.count_nonzero(tiles, axis=1).max(axis=1)
    # largest x with nnz <= n >> x
    x = np.zeros(len(nnz), dtype=np.int64)
    for cand in range(1, xmax + 1):
        x[nnz <= (n >> cand)] = cand
    bits = np.maximum(full - x, 0)
    bits[nnz <= 1] = 0
    return int(bits[0]) if single else bits


@dataclass
class AdcProfile:
    tile_size: int
    full_bits: int
    bits: np.ndarray
    layer_of_tile: list[str] = field(default_factory=list)

    @property
    def n_tiles(self) -> int:
        return len(self.bits)

    def counts(self) -> dict[int, int]:
        """Tiles per precision ``b`` (``b = 0`` are the zero-cost tiles)."""
        vals, cnt = np.unique(self.bits, return_counts=True)
        return {int(b): int(c) for b, c in zip(vals, cnt)}


def normalized_energy(profile: AdcProfile) -> float:
    """``(1/N) * sum_b N_b * b / B`` over all tiles; zero-cost tiles stay in ``N``."""
    N = profile.n_tiles
    if N == 0:
        raise ValueError("normalized energy is undefined for zero tiles")
    B = profile.full_bits
    total = sum(Nb * (b / B) for b, Nb in profile.counts().items() if b >= 1)
    return total / N


def grid_profile(grids: dict[str, TileGrid], full_bits: int | None = None) -> AdcProfile:
    n = None
    bits, owner = [], []
    for name, g in grids.items():
        if n is None:
            n = g.tile_size
        elif g.tile_size != n:
            raise ValueError("all layers must share one tile size")
        b = assign_bits(g.masked().flat(), full_bits)
        bits.append(b)
        owner += [name] * len(b)
    if n is None:
        raise ValueError("no tiled layers")
    full = full_precision(n) if full_bits is None else full_bits
    return AdcProfile(n, full, np.concatenate(bits), owner)


@dataclass
class EnergyReport:
    tile_size: int
    full_bits: int
    normalized_energy: float
    n_tiles: int
    precision_counts: dict[int, int]
    final_pruning_ratio: float
    layers: dict[str, dict] = field(default_factory=dict)

    @property
    def savings_ratio(self):
        return ALL_PRUNED if self.normalized_energy == 0 else 1.0 / self.normalized_energy

    def to_dict(self):
        return {
            "tile_size": self.tile_size,
            "full_bits": self.full_bits,
            "normalized_energy": self.normalized_energy,
            "savings_ratio": self.savings_ratio,
            "n_tiles": self.n_tiles,
            "precision_counts": {str(k): v for k, v in sorted(self.precision_counts.items())},
            "final_pruning_ratio": self.final_pruning_ratio,
            "layers": self.layers,
        }

    def to_json(self, path):
        with open(path, "w") as f:
            json.dump(self.to_dict(), f, indent=2, sort_keys=True)

    @classmethod
    def from_dict(cls, d):
        return cls(
            d["tile_size"], d["full_bits"], d["normalized_energy"], d["n_tiles"],
            {int(k): v for k, v in d["precision_counts"].items()},
            d["final_pruning_ratio"], d.get("layers", {}),
        )

    def to_csv(self, path):
        """Flat per-tile table."""
        with open(path, "w", newline="") as f:
            w = csv.writer(f)
            w.writerow(["layer", "tile", "bits", "lsc_sparsity"])
            for name, layer in self.layers.items():
                for t in layer["tiles"]:
                    w.writerow([name, t["index"], t["bits"], t["lsc_sparsity"]])


def energy_report(grids: dict[str, TileGrid], full_bits: int | None = None) -> EnergyReport:
    profile = grid_profile(grids, full_bits)
    layers = {}
    zeros = total = 0
    for name, g in grids.items():
        flat = g.masked().flat()
        live = ~g.flat_structural()
        n = g.tile_size
        b = profile.bits[[i for i, o in enumerate(profile.layer_of_tile) if o == name]]
        lsc = (n - np.count_nonzero(flat, axis=1).max(axis=1)) / n
        layer_zeros = int(np.count_nonzero((flat == 0) & live))
        zeros += layer_zeros
        total += g.height * g.width
        layers[name] = {
            "n_tiles": int(len(b)),
            "normalized_energy": float(b.sum() / (profile.full_bits * len(b))),
            "pruning_ratio": layer_zeros / (g.height * g.width),
            "tiles": [
                {"index": i, "bits": int(bi), "lsc_sparsity": float(si)}
                for i, (bi, si) in enumerate(zip(b, lsc))
            ],
        }
    return EnergyReport(
        profile.tile_size, profile.full_bits, normalized_energy(profile), profile.n_tiles,
        profile.counts(), zeros / total, layers,
    )


def format_savings(ratio) -> str:
    if ratio == ALL_PRUNED or ratio == math.inf:
        return ALL_PRUNED
    return f"{ratio:.2f}x"


def compare(reports: dict[str, EnergyReport], baseline: str | None = None,
            accuracy: dict[str, float] | None = None,
            allowed_ratio: dict[str, float] | None = None) -> list[dict]:
    """Table rows of energy savings (and accuracy deltas) against ``baseline``."""
    if not reports:
        raise ValueError("nothing to compare")
    baseline = baseline or next(iter(reports))
    base = reports[baseline]
    accuracy = accuracy or {}
    allowed_ratio = allowed_ratio or {}
    rows = []
    for name, r in reports.items():
        if (r.tile_size, r.n_tiles, r.full_bits) != (base.tile_size, base.n_tiles, base.full_bits):
            raise ValueError(
                f"{name!r} (n={r.tile_size}, tiles={r.n_tiles}) does not match baseline "
                f"{baseline!r} (n={base.tile_size}, tiles={base.n_tiles})"
            )
        ratio = ALL_PRUNED if r.normalized_energy == 0 else base.normalized_energy / r.normalized_energy
        acc = accuracy.get(name)
        base_acc = accuracy.get(baseline)
        rows.append({
            "method": name,
            "accuracy": acc,
            "accuracy_diff": None if acc is None or base_acc is None else acc - base_acc,
            "normalized_energy": r.normalized_energy,
            "energy_savings": format_savings(ratio),
            "allowed_pruning_ratio": allowed_ratio.get(name),
            "final_pruning_ratio": r.final_pruning_ratio,
        })
    return rows


def write_rows_csv(rows: list[dict], path):
    with open(path, "w", newline="") as f:
        w = csv.DictWriter(f, fieldnames=list(rows[0]))
        w.writeheader()
        for row in rows:
            w.writerow({k: ("" if v is None else v) for k, v in row.items()})
