import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from xbarprune.energy import (
    ALL_PRUNED,
    AdcProfile,
    EnergyReport,
    assign_bits,
    compare,
    energy_report,
    format_savings,
    normalized_energy,
)
from xbarprune.tiling import partition


def _tile_with_max_nnz(n, k, rng=None):
    tile = np.zeros((n, n))
    tile[:k, :] = 1.0
    return tile


def test_assign_bits_examples():
    assert assign_bits(_tile_with_max_nnz(64, 16)) == 4
    assert assign_bits(np.ones((64, 64))) == 6
    one_per_col = np.zeros((64, 64))
    one_per_col[np.arange(64) % 7, np.arange(64)] = 3.0
    assert assign_bits(one_per_col) == 0
    assert assign_bits(np.zeros((8, 8))) == 0


def test_assign_bits_uses_least_sparse_column():
    tile = np.zeros((8, 8))
    tile[:2, :] = 1
    tile[:5, 3] = 1  # one column with 5 nonzeros pins the tile at full precision
    assert assign_bits(tile) == 3
    tile[4, 3] = 0  # 4 nonzeros -> 50% level
    assert assign_bits(tile) == 2


def test_assign_bits_batch_matches_single():
    rng = np.random.default_rng(0)
    tiles = rng.standard_normal((30, 16, 16))
    tiles[rng.random(tiles.shape) < rng.uniform(0, 1, (30, 1, 1))] = 0
    np.testing.assert_array_equal(assign_bits(tiles), [assign_bits(t) for t in tiles])


def test_normalized_energy_spot_values():
    assert normalized_energy(AdcProfile(64, 6, np.array([6, 6, 6]))) == 1.0
    assert normalized_energy(AdcProfile(64, 6, np.array([6, 3]))) == 0.75
    assert normalized_energy(AdcProfile(64, 6, np.array([0, 0]))) == 0.0
    with pytest.raises(ValueError):
        normalized_energy(AdcProfile(64, 6, np.array([], dtype=int)))


def test_profile_counts_cover_all_tiles():
    p = AdcProfile(16, 4, np.array([4, 0, 2, 2, 0, 1]))
    c = p.counts()
    assert sum(c.values()) == p.n_tiles
    assert c == {0: 2, 1: 1, 2: 2, 4: 1}


def test_dense_network_report_is_one():
    rng = np.random.default_rng(1)
    grids = {"a": partition(rng.standard_normal((64, 96)), 32), "b": partition(rng.standard_normal((32, 32)), 32)}
    r = energy_report(grids)
    assert r.normalized_energy == 1.0 and r.savings_ratio == 1.0
    assert r.final_pruning_ratio == 0.0


def _report(energy, tiles=4):
    return EnergyReport(32, 5, energy, tiles, {5: tiles}, 0.0)


def test_compare_savings_strings():
    rows = compare({"dense": _report(1.0), "dub": _report(0.25), "other": _report(0.384), "gone": _report(0.0)},
                   "dense", accuracy={"dense": 0.9, "dub": 0.895})
    by = {r["method"]: r for r in rows}
    assert by["dense"]["energy_savings"] == "1.00x"
    assert by["dub"]["energy_savings"] == "4.00x"
    assert by["other"]["energy_savings"] == "2.60x"
    assert by["gone"]["energy_savings"] == ALL_PRUNED
    assert by["dub"]["accuracy_diff"] == pytest.approx(-0.005)


def test_compare_rejects_mismatched_configs():
    with pytest.raises(ValueError, match="does not match"):
        compare({"a": _report(1.0, 4), "b": _report(0.5, 5)}, "a")
    other = EnergyReport(64, 6, 0.5, 4, {6: 4}, 0.0)
    with pytest.raises(ValueError):
        compare({"a": _report(1.0), "b": other})


def test_format_savings():
    assert format_savings(4.0) == "4.00x"
    assert format_savings(float("inf")) == ALL_PRUNED


@settings(max_examples=100, deadline=None)
@given(st.lists(st.integers(0, 5), min_size=1, max_size=30), st.integers(0, 29))
def test_monotone_in_level(bits, i):
    """Raising one tile's level (fewer bits) never raises the energy."""
    b = np.array(bits)
    i %= len(b)
    e0 = normalized_energy(AdcProfile(32, 5, b))
    b2 = b.copy()
    b2[i] = max(b2[i] - 1, 0)
    e1 = normalized_energy(AdcProfile(32, 5, b2))
    assert e1 <= e0
    assert 0 <= e1 <= 1
    assert (e0 == 1) == bool(np.all(b == 5))


def test_linearity_over_layers():
    rng = np.random.default_rng(2)
    grids = {}
    for name, (H, W) in {"a": (64, 64), "b": (32, 128), "c": (96, 32)}.items():
        m = rng.standard_normal((H, W))
        m[rng.random((H, W)) < rng.uniform(0.3, 0.99)] = 0
        grids[name] = partition(m, 32)
    r = energy_report(grids)
    weighted = sum(L["normalized_energy"] * L["n_tiles"] for L in r.layers.values()) / r.n_tiles
    assert r.normalized_energy == pytest.approx(weighted, rel=1e-12)


def test_report_serialization(tmp_path):
    rng = np.random.default_rng(3)
    m = rng.standard_normal((40, 40))
    m[rng.random((40, 40)) < 0.8] = 0
    r = energy_report({"l": partition(m, 16)})
    r.to_json(tmp_path / "r.json")
    d = json.loads((tmp_path / "r.json").read_text())
    assert d["layers"]["l"]["n_tiles"] == 9
    back = EnergyReport.from_dict(d)
    assert back.normalized_energy == r.normalized_energy
    assert back.precision_counts == r.precision_counts
    r.to_csv(tmp_path / "r.csv")
    lines = (tmp_path / "r.csv").read_text().splitlines()
    assert lines[0] == "layer,tile,bits,lsc_sparsity" and len(lines) == 10
