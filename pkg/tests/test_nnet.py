import math

import numpy as np
import pytest

from oracles import TINY_ARCH, central_diff, full_loss_fd_trials
from xbarprune.data import split, synth_data
from xbarprune.nnet import (
    Network,
    NumericalError,
    TrainSpec,
    finetune,
    softmax_cross_entropy,
    train,
)
from xbarprune.regularize import RegCoefficients
from xbarprune.tiling import flatten_layer, LayerShape


def test_uniform_logits_give_log_c():
    for C in (2, 10, 7):
        loss, _ = softmax_cross_entropy(np.zeros((5, C)), np.arange(5) % C)
        assert loss == pytest.approx(math.log(C), rel=1e-12)


def test_confident_correct_logits_give_near_zero_loss():
    logits = np.full((3, 4), -50.0)
    logits[np.arange(3), [0, 2, 3]] = 50.0
    loss, _ = softmax_cross_entropy(logits, np.array([0, 2, 3]))
    assert loss < 1e-30


def test_cross_entropy_gradient_fd():
    rng = np.random.default_rng(0)
    logits = rng.standard_normal((4, 5))
    y = rng.integers(0, 5, 4)
    _, g = softmax_cross_entropy(logits, y)
    fd = central_diff(lambda z: softmax_cross_entropy(z, y)[0], logits)
    np.testing.assert_allclose(g, fd, rtol=1e-4, atol=1e-10)


def test_shape_mismatch_rejected():
    net = Network.from_spec(TINY_ARCH, (1, 5, 5))
    with pytest.raises(ValueError, match="shape"):
        net.forward(np.zeros((2, 1, 6, 6)))
    with pytest.raises(ValueError):
        Network.from_spec([{"type": "dense", "out": 3}], (1, 5, 5))


def test_zero_weight_linear_net_zero_input_zero_gradient():
    net = Network.from_spec([{"type": "flatten"}, {"type": "dense", "out": 3}], (4,), dtype=np.float64)
    net.layer("dense1").W[:] = 0
    _, grads = net.loss_and_grad(np.zeros((5, 4)), np.array([0, 1, 2, 0, 1]))
    assert not grads["dense1"][0].any()


def test_softmax_regression_closed_form():
    net = Network.from_spec([{"type": "dense", "out": 3}], (2,), seed=1, dtype=np.float64)
    x = np.array([[1.0, 2.0], [-0.5, 0.3]])
    y = np.array([2, 0])
    W, b = net.layer("dense1").W, net.layer("dense1").b
    z = x @ W + b
    p = np.exp(z - z.max(axis=1, keepdims=True))
    p /= p.sum(axis=1, keepdims=True)
    onehot = np.eye(3)[y]
    _, grads = net.loss_and_grad(x, y)
    np.testing.assert_allclose(grads["dense1"][0], x.T @ (p - onehot) / 2, rtol=1e-12)
    np.testing.assert_allclose(grads["dense1"][1], (p - onehot).sum(axis=0) / 2, rtol=1e-12)


def test_backprop_matches_fd_on_conv_net():
    rng = np.random.default_rng(2)
    net = Network.from_spec(TINY_ARCH, (1, 5, 5), seed=2, dtype=np.float64)
    x = rng.standard_normal((3, 1, 5, 5))
    y = np.array([0, 2, 1])
    _, grads = net.loss_and_grad(x, y)
    for layer in net.param_layers():
        W = layer.W

        def f(v, layer=layer):
            saved = layer.W.copy()
            layer.W[...] = v
            out = net.loss_and_grad(x, y)[0]
            layer.W[...] = saved
            return out

        fd = central_diff(f, W.copy())
        sel = np.abs(W) > 1e-3
        np.testing.assert_allclose(grads[layer.name][0][sel], fd[sel], rtol=1e-4, atol=1e-9)


def test_conv_matches_direct_convolution():
    rng = np.random.default_rng(3)
    O, I, k = 3, 2, 3
    w = rng.standard_normal((O, I, k, k))
    net = Network.from_spec([{"type": "conv", "out": O, "k": k}], (I, 6, 5), dtype=np.float64)
    net.layer("conv1").W[...] = flatten_layer(w, LayerShape.conv(O, I, k)).values
    x = rng.standard_normal((2, I, 6, 5))
    out = net.forward(x)
    ref = np.zeros((2, O, 4, 3))
    for o in range(O):
        for r in range(4):
            for c in range(3):
                ref[:, o, r, c] = np.sum(x[:, :, r:r + k, c:c + k] * w[o], axis=(1, 2, 3))
    np.testing.assert_allclose(out, ref, rtol=1e-12)


def test_full_loss_gradient_fd():
    errs = np.concatenate([full_loss_fd_trials(s, coords=20) for s in range(10)])
    assert errs.max() < 1e-3


def _separable(seed=0):
    x, y = synth_data(2, (2, 6, 6), 400, seed=seed, separation=6.0, noise=0.3)
    return split(x, y, 2, 0.25)


MLP = [{"type": "flatten"}, {"type": "dense", "out": 16}, {"type": "relu"}, {"type": "dense", "out": 2}]


def test_separable_data_reaches_99_percent():
    data = _separable()
    net = Network.from_spec(MLP, (2, 6, 6), seed=0)
    spec = TrainSpec(lr=0.05, epochs=200, batch_size=32, tile_size=8)
    hist = train(net, data, spec)
    assert net.accuracy(data.x_train, data.y_train) >= 0.99
    assert len(hist.rows) == 200


def _small_run(seed=3, epochs=3, **kw):
    data = _separable(1)
    net = Network.from_spec(MLP, (2, 6, 6), seed=seed)
    spec = TrainSpec(lr=0.02, epochs=epochs, batch_size=16, tile_size=8, seed=seed, **kw)
    train(net, data, spec)
    return net


def test_same_seed_bit_identical():
    a = _small_run(coeffs=RegCoefficients(1e-3, 1e-3))
    b = _small_run(coeffs=RegCoefficients(1e-3, 1e-3))
    for la, lb in zip(a.param_layers(), b.param_layers()):
        assert la.W.tobytes() == lb.W.tobytes() and la.b.tobytes() == lb.b.tobytes()
    c = _small_run(seed=4)
    assert a.layer("dense1").W.tobytes() != c.layer("dense1").W.tobytes()


def test_masked_weights_stay_zero_during_training():
    data = _separable(2)
    net = Network.from_spec(MLP, (2, 6, 6), seed=0)
    rng = np.random.default_rng(0)
    masks = {l.name: rng.random(l.W.shape) < 0.5 for l in net.param_layers()}
    train(net, data, TrainSpec(lr=0.05, epochs=2, tile_size=8, coeffs=RegCoefficients(1e-3, 1e-2)), masks=masks)
    for l in net.param_layers():
        assert np.all(l.W[~masks[l.name]] == 0)


def test_finetune_all_ones_equals_train():
    data = _separable(3)
    spec = TrainSpec(lr=0.05, epochs=1, finetune_epochs=2, finetune_lr=0.01, tile_size=8,
                     coeffs=RegCoefficients(lambda_mean=1e-4))
    a = Network.from_spec(MLP, (2, 6, 6), seed=0)
    b = a.copy()
    finetune(a, data, spec, {l.name: np.ones(l.W.shape, bool) for l in a.param_layers()})
    train(b, data, spec.finetune_spec())
    for la, lb in zip(a.param_layers(), b.param_layers()):
        np.testing.assert_array_equal(la.W, lb.W)


def test_finetune_all_zero_masks_leaves_weights():
    data = _separable(4)
    net = Network.from_spec([{"type": "flatten"}, {"type": "dense", "out": 2}], (2, 6, 6), seed=0)
    zeros = {"dense1": np.zeros(net.layer("dense1").W.shape, bool)}
    net.set_masks(zeros)
    before = net.layer("dense1").W.copy()
    finetune(net, data, TrainSpec(tile_size=8, finetune_epochs=3), zeros)
    np.testing.assert_array_equal(net.layer("dense1").W, before)


def test_divergence_raises():
    data = _separable(5)
    net = Network.from_spec(MLP, (2, 6, 6), seed=0)
    with pytest.raises(NumericalError, match="epoch"):
        train(net, data, TrainSpec(lr=1e12, momentum=0.0, epochs=3, tile_size=8))


def test_variance_regularizer_reduces_intra_tile_variance():
    x, y = synth_data(4, (1, 8, 8), 600, seed=0, separation=2.0, noise=1.0)
    data = split(x, y, 4, 0.25)
    arch = [{"type": "flatten"}, {"type": "dense", "out": 32}, {"type": "relu"}, {"type": "dense", "out": 4}]

    def run(lv):
        net = Network.from_spec(arch, (1, 8, 8), seed=0)
        spec = TrainSpec(lr=0.02, epochs=15, tile_size=16, coeffs=RegCoefficients(1e-4, lv), tile_scope="all")
        hist = train(net, data, spec, track_tiles=True)
        return hist

    hist = run(2e-2)
    var = [row["var_reg"] for row in hist.rows]
    assert var[-1] < var[0]
    # per-tile max H_s minus mean shrinks across epochs
    gaps = [np.mean((lsc["dense1"][0] - lsc["dense1"][1])) for lsc in hist.lsc_hoyer]
    assert gaps[-1] < gaps[0]
    assert np.mean(np.diff(gaps) <= 0) >= 0.5
    base = run(0.0)
    base_gap = np.mean(base.lsc_hoyer[-1]["dense1"][0] - base.lsc_hoyer[-1]["dense1"][1])
    assert gaps[-1] < base_gap


def test_history_csv(tmp_path):
    data = _separable(6)
    net = Network.from_spec(MLP, (2, 6, 6), seed=0)
    hist = train(net, data, TrainSpec(epochs=2, tile_size=8))
    hist.to_csv(tmp_path / "h.csv")
    lines = (tmp_path / "h.csv").read_text().splitlines()
    assert lines[0] == "epoch,cls_loss,l2,var_reg,train_acc,test_acc" and len(lines) == 3
