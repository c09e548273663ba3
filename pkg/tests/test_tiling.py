import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from xbarprune.tiling import (
    LayerShape,
    flatten_layer,
    layer_weights,
    partition,
    unflatten,
)


def test_conv_flatten_height_is_k2_times_in_channels():
    shape = LayerShape.conv(8, 3, 3)
    m = flatten_layer(np.zeros((8, 3, 3, 3)), shape)
    assert m.values.shape == (27, 8)


def test_dense_identity_flattens_to_identity():
    m = flatten_layer(np.eye(4), LayerShape.dense(4, 4))
    np.testing.assert_array_equal(m.values, np.eye(4))


def test_conv_index_map_hand_enumerated():
    kernel = np.array([[1.0, 2.0], [3.0, 4.0]]).reshape(1, 1, 2, 2)
    m = flatten_layer(kernel, LayerShape.conv(1, 1, 2))
    np.testing.assert_array_equal(m.values[:, 0], [1, 2, 3, 4])


def test_conv_index_map_every_entry():
    O, I, k = 3, 2, 3
    w = np.random.default_rng(0).standard_normal((O, I, k, k))
    m = flatten_layer(w, LayerShape.conv(O, I, k))
    for o in range(O):
        for i in range(I):
            for r in range(k):
                for s in range(k):
                    assert m.values[i * k * k + r * k + s, o] == w[o, i, r, s]
    np.testing.assert_array_equal(layer_weights(m), w)


def test_flatten_rejects_wrong_count_with_counts():
    with pytest.raises(ValueError, match="expected 216 weights.*got 215"):
        flatten_layer(np.zeros(215), LayerShape.conv(8, 3, 3))


def test_layer_shape_rejects_zero_dims():
    with pytest.raises(ValueError):
        LayerShape.conv(0, 3, 3)


@pytest.mark.parametrize(
    "H,W,n,tiles,pad_rows,pad_cols",
    [(27, 8, 32, 1, 5, 24), (64, 64, 64, 1, 0, 0), (65, 64, 64, 2, 63, 0)],
)
def test_partition_counts_and_padding(H, W, n, tiles, pad_rows, pad_cols):
    g = partition(np.ones((H, W)), n)
    assert g.n_tiles == tiles
    assert (g.pad_rows, g.pad_cols) == (pad_rows, pad_cols)
    assert g.flat().shape == (tiles, n, n)
    assert np.all(g.tiles[g.structural] == 0)
    assert g.structural.sum() == tiles * n * n - H * W


def test_partition_65_rows_stacks_vertically():
    g = partition(np.ones((65, 64)), 64)
    assert g.tiles.shape[:2] == (2, 1)
    assert g.structural[1, 0, 1:].all() and not g.structural[1, 0, 0].any()


@pytest.mark.parametrize("n", [3, 0, 1, 48])
def test_partition_rejects_non_power_of_two(n):
    with pytest.raises(ValueError, match="power of 2"):
        partition(np.ones((4, 4)), n)


def test_unflatten_round_trip_random():
    m = np.random.default_rng(1).standard_normal((100, 70))
    out = unflatten(partition(m, 32))
    assert out.dtype == m.dtype
    np.testing.assert_array_equal(out, m)


def test_unflatten_zero_and_single_tile():
    np.testing.assert_array_equal(unflatten(partition(np.zeros((40, 9)), 8)), np.zeros((40, 9)))
    m = np.arange(64 * 64, dtype=float).reshape(64, 64)
    np.testing.assert_array_equal(unflatten(partition(m, 64)), m)


def test_unflatten_keeps_layer_metadata():
    w = np.random.default_rng(2).standard_normal((5, 3, 2, 2))
    m = flatten_layer(w, LayerShape.conv(5, 3, 2), "c1")
    back = unflatten(partition(m, 4))
    assert back.layer_name == "c1" and back.shape == m.shape
    np.testing.assert_array_equal(back.values, m.values)


def test_column_view():
    m = np.arange(20, dtype=float).reshape(5, 4)
    g = partition(m, 4)
    v = g.column(1, 1)  # second tile (row block 1), its column 1
    np.testing.assert_array_equal(v.weights, [17, 0, 0, 0])
    np.testing.assert_array_equal(v.structural, [False, True, True, True])
    assert len(g.columns(0)) == 4


@settings(max_examples=200, deadline=None)
@given(st.integers(1, 90), st.integers(1, 90), st.sampled_from([2, 4, 8, 16, 32]), st.integers(0, 2**31))
def test_round_trip_and_tile_count_property(H, W, n, seed):
    m = np.random.default_rng(seed).standard_normal((H, W))
    g = partition(m, n)
    assert g.n_tiles == -(-H // n) * -(-W // n)
    np.testing.assert_array_equal(unflatten(g), m)
    assert np.all(g.tiles[g.structural] == 0)


@settings(max_examples=50, deadline=None)
@given(st.integers(1, 5), st.integers(1, 5), st.integers(1, 4), st.integers(0, 2**31))
def test_conv_mapping_bijective(O, I, k, seed):
    w = np.random.default_rng(seed).standard_normal((O, I, k, k))
    m = flatten_layer(w, LayerShape.conv(O, I, k))
    np.testing.assert_array_equal(layer_weights(m), w)
    assert np.unique(m.values).size == w.size
