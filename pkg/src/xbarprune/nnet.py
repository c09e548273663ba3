"""A small conv/dense network with hand-written backpropagation.

Weight matrices are stored in the flattened crossbar layout: a conv layer
holds a ``(k*k*I, O)`` matrix and convolves through im2col, a dense layer
holds ``(fan_in, fan_out)``. Pruning masks share that layout.
"""

from __future__ import annotations

import copy
import logging
import math
from dataclasses import dataclass, field, replace

import numpy as np

from . import kernels
from .regularize import RegCoefficients, total_loss
from .tiling import LayerShape, live_columns, to_tiles

log = logging.getLogger(__name__)


class NumericalError(RuntimeError):
    """Training diverged (non-finite loss or weights)."""


class Conv:
    kind = "conv"

    def __init__(self, name, in_channels, out_channels, k):
        self.name = name
        self.shape = LayerShape.conv(out_channels, in_channels, k)
        self.k = k
        self.W = None
        self.b = None

    def out_shape(self, in_shape):
        C, H, W = in_shape
        if C != self.shape.in_channels:
            raise ValueError(f"{self.name}: expects {self.shape.in_channels} channels, got {C}")
        if H < self.k or W < self.k:
            raise ValueError(f"{self.name}: input {H}x{W} smaller than kernel {self.k}")
        return (self.shape.out_channels, H - self.k + 1, W - self.k + 1)

    def forward(self, x, weight):
        B, _, H, W = x.shape
        Ho, Wo = H - self.k + 1, W - self.k + 1
        cols = kernels.im2col(x, self.k)
        out = cols @ weight + self.b
        cache = (x.shape, cols)
        return out.reshape(B, Ho, Wo, -1).transpose(0, 3, 1, 2), cache

    def backward(self, dout, cache, weight):
        x_shape, cols = cache
        O = dout.shape[1]
        d2 = dout.transpose(0, 2, 3, 1).reshape(-1, O)
        dW = cols.T @ d2
        db = d2.sum(axis=0)
        dx = kernels.col2im(d2 @ weight.T, x_shape, self.k)
        return dx, dW, db


class Dense:
    kind = "dense"

    def __init__(self, name, fan_in, fan_out):
        self.name = name
        self.shape = LayerShape.dense(fan_in, fan_out)
        self.W = None
        self.b = None

    def out_shape(self, in_shape):
        if in_shape != (self.shape.fan_in,):
            raise ValueError(f"{self.name}: expects input ({self.shape.fan_in},), got {in_shape}")
        return (self.shape.fan_out,)

    def forward(self, x, weight):
        return x @ weight + self.b, x

    def backward(self, dout, x, weight):
        return dout @ weight.T, x.T @ dout, dout.sum(axis=0)


class ReLU:
    kind = "relu"

    def out_shape(self, in_shape):
        return in_shape

    def forward(self, x):
        pos = x > 0
        return x * pos, pos

    def backward(self, dout, pos):
        return dout * pos


class MaxPool:
    kind = "maxpool"

    def __init__(self, size=2):
        self.size = size

    def out_shape(self, in_shape):
        C, H, W = in_shape
        return (C, H // self.size, W // self.size)

    def forward(self, x):
        s = self.size
        B, C, H, W = x.shape
        Ho, Wo = H // s, W // s
        views = [x[:, :, a:Ho * s:s, b:Wo * s:s] for a in range(s) for b in range(s)]
        out = views[0].copy()
        for v in views[1:]:
            np.maximum(out, v, out=out)
        return out, (x, out)

    def backward(self, dout, cache):
        # the first maximum of each window (row-major) takes the gradient
        x, out = cache
        s = self.size
        Ho, Wo = out.shape[2], out.shape[3]
        dx = np.zeros_like(x)
        free = np.ones(out.shape, dtype=bool)
        for a in range(s):
            for b in range(s):
                hit = free & (x[:, :, a:Ho * s:s, b:Wo * s:s] == out)
                dx[:, :, a:Ho * s:s, b:Wo * s:s] = np.where(hit, dout, 0)
                free &= ~hit
        return dx


class Flatten:
    kind = "flatten"

    def out_shape(self, in_shape):
        return (int(np.prod(in_shape)),)

    def forward(self, x):
        return x.reshape(x.shape[0], -1), x.shape

    def backward(self, dout, shape):
        return dout.reshape(shape)


def softmax_cross_entropy(logits, labels):
    """Mean cross-entropy and its gradient with respect to the logits."""
    z = logits - logits.max(axis=1, keepdims=True)
    logp = z - np.log(np.exp(z).sum(axis=1, keepdims=True))
    B = logits.shape[0]
    loss = -logp[np.arange(B), labels].mean()
    grad = np.exp(logp)
    grad[np.arange(B), labels] -= 1
    return float(loss), grad / B


class Network:
    """Ordered layers; parametric ones are addressable by name."""

    def __init__(self, layers, input_shape, dtype=np.float32):
        self.layers = layers
        self.input_shape = tuple(input_shape)
        self.dtype = np.dtype(dtype)
        self.masks: dict[str, np.ndarray] = {}
        shape = self.input_shape
        for layer in layers:
            shape = layer.out_shape(shape)
        self.output_shape = shape

    @classmethod
    def from_spec(cls, arch, input_shape, seed=0, dtype=np.float32):
        """Build from a list like ``[{"type": "conv", "out": 8, "k": 3}, ...]``."""
        layers = []
        shape = tuple(input_shape)
        counts = {"conv": 0, "dense": 0}
        for item in arch:
            kind = item["type"]
            if kind == "conv":
                counts["conv"] += 1
                layer = Conv(item.get("name", f"conv{counts['conv']}"), shape[0], item["out"], item["k"])
            elif kind == "dense":
                counts["dense"] += 1
                layer = Dense(item.get("name", f"dense{counts['dense']}"), shape[0], item["out"])
            elif kind == "relu":
                layer = ReLU()
            elif kind == "maxpool":
                layer = MaxPool(item.get("size", 2))
            elif kind == "flatten":
                layer = Flatten()
            else:
                raise ValueError(f"unknown layer type {kind!r}")
            shape = layer.out_shape(shape)
            layers.append(layer)
        net = cls(layers, input_shape, dtype)
        net.init_weights(seed)
        return net

    def init_weights(self, seed):
        rng = np.random.default_rng(seed)
        for layer in self.param_layers():
            fan_in = layer.shape.height
            bound = math.sqrt(6.0 / fan_in)
            layer.W = rng.uniform(-bound, bound, (layer.shape.height, layer.shape.width)).astype(self.dtype)
            layer.b = np.zeros(layer.shape.width, dtype=self.dtype)

    def param_layers(self):
        return [l for l in self.layers if l.kind in ("conv", "dense")]

    def layer(self, name):
        for l in self.param_layers():
            if l.name == name:
                return l
        raise KeyError(name)

    def weights(self) -> dict[str, np.ndarray]:
        return {l.name: l.W for l in self.param_layers()}

    def n_weights(self) -> int:
        return sum(l.W.size for l in self.param_layers())

    def tiled_layers(self, scope="auto") -> list[str]:
        """Layers mapped onto crossbar tiles for pruning and energy."""
        params = self.param_layers()
        if scope == "all":
            return [l.name for l in params]
        if scope == "conv" or (scope == "auto" and any(l.kind == "conv" for l in params)):
            return [l.name for l in params if l.kind == "conv"]
        if scope == "auto":
            return [l.name for l in params]
        raise ValueError(f"unknown tile scope {scope!r}")

    def set_masks(self, masks):
        self.masks = {k: np.asarray(v, dtype=bool).copy() for k, v in masks.items()}
        self.apply_masks()

    def apply_masks(self):
        for name, m in self.masks.items():
            layer = self.layer(name)
            layer.W[~m] = 0

    def copy(self):
        return copy.deepcopy(self)

    def forward(self, x, keep_cache=False):
        x = np.asarray(x, dtype=self.dtype)
        if x.shape[1:] != self.input_shape:
            raise ValueError(f"batch has item shape {x.shape[1:]}, network expects {self.input_shape}")
        caches = []
        for layer in self.layers:
            if layer.kind in ("conv", "dense"):
                x, c = layer.forward(x, self._effective(layer))
            else:
                x, c = layer.forward(x)
            caches.append(c)
        return (x, caches) if keep_cache else x

    def _effective(self, layer):
        m = self.masks.get(layer.name)
        return layer.W if m is None else layer.W * m

    def backward(self, caches, dlogits):
        """Weight and bias gradients; masked positions are zero."""
        grads = {}
        d = dlogits
        for layer, c in zip(reversed(self.layers), reversed(caches)):
            if layer.kind in ("conv", "dense"):
                d, dW, db = layer.backward(d, c, self._effective(layer))
                m = self.masks.get(layer.name)
                if m is not None:
                    dW = dW * m
                grads[layer.name] = (dW, db)
            else:
                d = layer.backward(d, c)
        return grads

    def loss_and_grad(self, x, y, return_logits=False):
        logits, caches = self.forward(x, keep_cache=True)
        loss, dlogits = softmax_cross_entropy(logits, y)
        grads = self.backward(caches, dlogits)
        return (loss, grads, logits) if return_logits else (loss, grads)

    def predict(self, x, batch_size=512):
        out = [self.forward(x[i:i + batch_size]).argmax(axis=1) for i in range(0, len(x), batch_size)]
        return np.concatenate(out) if out else np.zeros(0, dtype=np.int64)

    def accuracy(self, x, y):
        return float((self.predict(x) == y).mean()) if len(y) else float("nan")


@dataclass
class TrainSpec:
    lr: float = 0.05
    momentum: float = 0.9
    batch_size: int = 64
    epochs: int = 20
    lr_step: int = 0  # epochs between decays; 0 disables
    lr_decay: float = 0.1
    coeffs: RegCoefficients = field(default_factory=RegCoefficients)
    tile_size: int = 32
    seed: int = 0
    finetune_epochs: int = 5
    finetune_lr: float = 0.01
    grouping: str = "tile"
    tile_scope: str = "auto"

    def __post_init__(self):
        for k in ("lr", "batch_size", "epochs", "finetune_lr"):
            if getattr(self, k) <= 0:
                raise ValueError(f"{k} must be positive")
        if not 0 <= self.momentum < 1:
            raise ValueError("momentum must lie in [0, 1)")
        if self.finetune_epochs < 0:
            raise ValueError("finetune_epochs must be >= 0")

    def finetune_spec(self):
        return replace(
            self, lr=self.finetune_lr, epochs=self.finetune_epochs, lr_step=0,
            coeffs=RegCoefficients(lambda_mean=self.coeffs.lambda_mean),
        )


@dataclass
class History:
    rows: list[dict] = field(default_factory=list)
    lsc_hoyer: list[dict] = field(default_factory=list)  # per epoch: layer -> per-tile max H_s

    FIELDS = ("epoch", "cls_loss", "l2", "var_reg", "train_acc", "test_acc")

    def to_csv(self, path):
        import csv

        with open(path, "w", newline="") as f:
            w = csv.DictWriter(f, fieldnames=list(self.FIELDS))
            w.writeheader()
            for r in self.rows:
                w.writerow({k: r[k] for k in self.FIELDS})


def tile_hoyer_gap(net, n, names):
    """Per layer: per-tile ``(max column H_s, mean column H_s)``."""
    out = {}
    for name in names:
        W = net._effective(net.layer(name))
        tiles = to_tiles(W.astype(np.float64), n)
        hs = kernels.column_hoyer(tiles)
        live = np.arange(n)[None, :] < live_columns(*W.shape, n)[:, None]
        mu = np.where(live, hs, 0).sum(axis=1) / live.sum(axis=1)
        out[name] = (np.where(live, hs, -np.inf).max(axis=1), mu)
    return out


def train(net: Network, data, spec: TrainSpec, masks=None, history: History | None = None,
          track_tiles: bool = False) -> History:
    """SGD with momentum on cross-entropy plus the configured regularizers.

    ``masks`` (layer -> bool matrix) are frozen for the whole run. Mutates
    ``net`` in place and returns the per-epoch history.
    """
    history = history or History()
    if masks is not None:
        net.set_masks(masks)
    names = net.tiled_layers(spec.tile_scope)
    ss = np.random.SeedSequence(spec.seed)
    rng = np.random.default_rng(ss.spawn(1)[0])
    vel = {l.name: (np.zeros_like(l.W), np.zeros_like(l.b)) for l in net.param_layers()}
    x, y = data.x_train, data.y_train
    lr = spec.lr
    for epoch in range(spec.epochs):
        if spec.lr_step and epoch and epoch % spec.lr_step == 0:
            lr *= spec.lr_decay
        order = rng.permutation(len(x))
        tot = {"cls": 0.0, "l2": 0.0, "var": 0.0}
        nb = correct = 0
        for i in range(0, len(x), spec.batch_size):
            idx = order[i:i + spec.batch_size]
            # overflow is reported through the finiteness check below
            with np.errstate(over="ignore", invalid="ignore"):
                cls, grads, logits = net.loss_and_grad(x[idx], y[idx], return_logits=True)
            correct += int((logits.argmax(axis=1) == y[idx]).sum())
            weights = net.weights()
            loss, reg, terms = total_loss(
                cls, weights, spec.tile_size, spec.coeffs, net.masks, names, spec.grouping
            )
            if not math.isfinite(loss):
                raise NumericalError(
                    f"loss became {loss} at epoch {epoch}, batch {nb} "
                    f"(cls={cls}, l2={terms['l2']}, var={terms['var']}, lr={lr})"
                )
            for layer in net.param_layers():
                dW, db = grads[layer.name]
                vW, vb = vel[layer.name]
                vW *= spec.momentum
                vW -= lr * (dW + reg[layer.name])
                vb *= spec.momentum
                vb -= lr * db
                layer.W += vW
                layer.b += vb
            net.apply_masks()
            tot["cls"] += cls
            tot["l2"] += terms["l2"]
            tot["var"] += terms["var"]
            nb += 1
        row = {
            "epoch": epoch,
            "cls_loss": tot["cls"] / nb,
            "l2": tot["l2"] / nb,
            "var_reg": tot["var"] / nb,
            "train_acc": correct / len(x),
            "test_acc": net.accuracy(data.x_test, data.y_test),
        }
        history.rows.append(row)
        if track_tiles:
            history.lsc_hoyer.append(tile_hoyer_gap(net, spec.tile_size, names))
        log.info("epoch %d: %s", epoch, row)
    return history


def finetune(net: Network, data, spec: TrainSpec, masks) -> History:
    """Retrain surviving weights with ``masks`` frozen (weight decay only)."""
    return train(net, data, spec.finetune_spec(), masks=masks)
