"""Training-time regularizers: weight decay, gated tile variance, group lasso.

Every term returns its value and analytic gradient. Weights are passed as
``{layer_name: (H, W) matrix}`` in flattened layout; gradients come back in
the same layout with masked positions forced to zero.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import kernels
from .prune import GROUPINGS, group_norms
from .tiling import TileColumnView, from_tiles, live_columns, structural_tiles, to_tiles

GROUP_EPS = 1e-12


@dataclass(frozen=True)
class RegCoefficients:
    lambda_mean: float = 0.0
    lambda_var: float = 0.0
    lambda_group: float = 0.0

    def __post_init__(self):
        for k in ("lambda_mean", "lambda_var", "lambda_group"):
            if getattr(self, k) < 0:
                raise ValueError(f"{k} must be >= 0")
        if self.lambda_var > 0 and self.lambda_group > 0:
            raise ValueError("lambda_var and lambda_group cannot both be nonzero")


@dataclass
class RegResult:
    value: float
    gradient: object


def _masked(grad, mask):
    return grad if mask is None else np.where(mask, grad, 0).astype(grad.dtype, copy=False)


def l2_penalty(weights, mask=None) -> RegResult:
    """Sum of squared weights (biases are never passed in)."""
    if isinstance(weights, dict):
        masks = mask or {}
        parts = {k: l2_penalty(w, masks.get(k)) for k, w in weights.items()}
        return RegResult(sum(p.value for p in parts.values()), {k: p.gradient for k, p in parts.items()})
    w = np.asarray(weights)
    if mask is not None:
        w = np.where(mask, w, 0)
    return RegResult(float(np.sum(np.square(w, dtype=np.float64))), _masked(2 * w, mask))


def variance_gate(v) -> tuple[float, np.ndarray]:
    """Value and gated gradient of ``sum_c (v_c - mu)^2`` w.r.t. column measures.

    ``mu`` is the mean of ``v`` and is held constant in the backward pass;
    only columns strictly above it pass ``2 (v_c - mu)``, the rest get 0.
    """
    v = np.asarray(v, dtype=np.float64)
    mu = v.mean()
    dev = v - mu
    return float(np.sum(dev * dev)), np.where(v > mu, 2.0 * dev, 0.0)


def gated_variance(columns: list[TileColumnView]) -> RegResult:
    """Gated Hoyer-Square variance of one tile given its column views.

    Columns made entirely of padding are left out of the mean and the sum.
    The gradient is ``(n, n)`` (rows x columns).
    """
    n = len(columns)
    tile = np.stack([c.weights for c in columns], axis=1).astype(np.float64)
    live = sum(1 for c in columns if not np.all(c.structural))
    order = [i for i, c in enumerate(columns) if not np.all(c.structural)]
    order += [i for i, c in enumerate(columns) if np.all(c.structural)]
    # live columns first, as the kernel expects
    values, grad = kernels.gated_variance(tile[None][:, :, order], np.array([live]))
    out = np.zeros((n, n))
    out[:, order] = grad[0]
    return RegResult(float(values[0]), out)


def variance_term(values: np.ndarray, n: int, mask=None) -> RegResult:
    """Sum over the layer's tiles of the gated variance, with its gradient."""
    if mask is not None:
        values = np.where(mask, values, 0).astype(values.dtype, copy=False)
    H, W = values.shape
    tiles = to_tiles(values, n)
    v, g = kernels.gated_variance(tiles, live_columns(H, W, n))
    return RegResult(float(v.sum()), _masked(from_tiles(g, H, W), mask))


def group_lasso(values: np.ndarray, n: int, grouping: str, mask=None) -> RegResult:
    """``sum_g ||g||_2`` over crossbar columns, rows or whole tiles of one layer."""
    if grouping not in GROUPINGS:
        raise ValueError(f"grouping must be one of {GROUPINGS}, got {grouping!r}")
    if mask is not None:
        values = np.where(mask, values, 0).astype(values.dtype, copy=False)
    H, W = values.shape
    tiles = to_tiles(values, n)
    norms = group_norms(tiles, grouping)
    if grouping == "column":
        den = norms[:, None, :]
    elif grouping == "row":
        den = norms[:, :, None]
    else:
        den = norms[:, None, None]
    g = (tiles / (den + GROUP_EPS)).astype(values.dtype, copy=False)
    g[structural_tiles(H, W, n)] = 0
    return RegResult(float(norms.sum()), _masked(from_tiles(g, H, W), mask))


def total_loss(cls_loss: float, weights: dict, n: int, coeffs: RegCoefficients,
               masks: dict | None = None, tiled: list[str] | None = None,
               grouping: str = "tile"):
    """Full training loss and the regularizer gradient.

    ``weights`` holds every trainable weight matrix (for weight decay);
    ``tiled`` names the layers the tile-level terms act on (default: all).
    Returns ``(loss, grads, terms)`` where ``terms`` has each penalty value.
    """
    masks = masks or {}
    tiled = list(weights) if tiled is None else tiled
    grads = {k: np.zeros_like(w) for k, w in weights.items()}
    terms = {"l2": 0.0, "var": 0.0, "group": 0.0}
    if coeffs.lambda_mean:
        for k, w in weights.items():
            r = l2_penalty(w, masks.get(k))
            terms["l2"] += r.value
            grads[k] += coeffs.lambda_mean * r.gradient
    if coeffs.lambda_var:
        for k in tiled:
            r = variance_term(weights[k], n, masks.get(k))
            terms["var"] += r.value
            grads[k] += coeffs.lambda_var * r.gradient
    if coeffs.lambda_group:
        for k in tiled:
            r = group_lasso(weights[k], n, grouping, masks.get(k))
            terms["group"] += r.value
            grads[k] += coeffs.lambda_group * r.gradient
    loss = (cls_loss + coeffs.lambda_mean * terms["l2"] + coeffs.lambda_var * terms["var"]
            + coeffs.lambda_group * terms["group"])
    return loss, grads, terms
