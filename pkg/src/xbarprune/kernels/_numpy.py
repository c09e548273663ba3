"""Vectorised numpy implementations of the hot per-tile kernels.

All tile batches are ``(T, n, n)`` arrays indexed ``[tile, row, column]``.
"""

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

HOYER_EPS = 1e-12


def column_hoyer(tiles):
    a1 = np.abs(tiles).sum(axis=1)
    s2 = np.square(tiles).sum(axis=1)
    out = np.square(a1) / (s2 + HOYER_EPS)
    out[s2 == 0] = 0.0
    return out


def column_hoyer_grad(tiles):
    a1 = np.abs(tiles).sum(axis=1, keepdims=True)
    s2 = np.square(tiles).sum(axis=1, keepdims=True)
    num = 2.0 * np.sign(tiles) * a1 * s2 - np.square(a1) * 2.0 * tiles
    return num / np.square(s2 + HOYER_EPS)


def gated_variance(tiles, ncols):
    """Per-tile gated variance of column Hoyer-Square values.

    Returns ``(values, grad)`` where ``values[t]`` is the unnormalised sum of
    squared deviations over the first ``ncols[t]`` columns and ``grad`` is the
    gated gradient with the tile mean held constant.
    """
    T, n, _ = tiles.shape
    hs = column_hoyer(tiles)
    live = np.arange(n)[None, :] < np.asarray(ncols)[:, None]
    mu = np.where(live, hs, 0.0).sum(axis=1) / np.asarray(ncols, dtype=hs.dtype)
    dev = np.where(live, hs - mu[:, None], 0.0)
    values = np.square(dev).sum(axis=1)
    gate = np.where(live & (hs > mu[:, None]), 2.0 * dev, 0.0)
    grad = gate[:, None, :] * column_hoyer_grad(tiles)
    return values, grad.astype(tiles.dtype, copy=False)


def prune_tiles(tiles, structural, tau, keep_counts, levels):
    """Per-tile discretised balanced pruning.

    ``keep_counts[j]`` is the per-column keep count of ``levels[j]`` (the last
    level being full removal). Returns ``(mask, level_index)``.
    """
    T, n, _ = tiles.shape
    mag = np.abs(tiles)
    identified = structural | (mag == 0) | (mag < tau)
    zeros = identified.sum(axis=1)
    lsc = zeros.min(axis=1) / n
    dist = np.abs(levels[None, :] - lsc[:, None])
    # ties resolve toward the higher level: scan from the top
    rev = dist[:, ::-1]
    level_index = len(levels) - 1 - np.argmin(rev, axis=1)
    k = keep_counts[level_index]
    order = np.argsort(-mag, axis=1, kind="stable")
    rank = np.argsort(order, axis=1)
    mask = (rank < k[:, None, None]) & (mag > 0) & ~structural
    return mask, level_index


def im2col(x, k):
    """``(B, C, H, W)`` -> ``(B * Ho * Wo, C * k * k)`` with (c, r, s) column order."""
    B, C, H, W = x.shape
    win = sliding_window_view(x, (k, k), axis=(2, 3))
    Ho, Wo = win.shape[2], win.shape[3]
    return np.ascontiguousarray(win.transpose(0, 2, 3, 1, 4, 5)).reshape(B * Ho * Wo, C * k * k)


def col2im(cols, x_shape, k):
    B, C, H, W = x_shape
    Ho, Wo = H - k + 1, W - k + 1
    g = cols.reshape(B, Ho, Wo, C, k, k)
    out = np.zeros(x_shape, dtype=cols.dtype)
    for r in range(k):
        for s in range(k):
            out[:, :, r:r + Ho, s:s + Wo] += g[:, :, :, :, r, s].transpose(0, 3, 1, 2)
    return out
