"""numba-compiled loop kernels mirroring ``_numpy``.

Per-tile work is distributed with ``prange``; every tile writes only its own
output slice so results do not depend on the thread count.
"""

import numpy as np
from numba import njit, prange

HOYER_EPS = 1e-12


@njit(cache=True)
def _column_sums(tiles, t, a1, s2):
    # row-major sweep: the inner loop runs along contiguous memory
    n, m = tiles.shape[1], tiles.shape[2]
    a1[:] = 0.0
    s2[:] = 0.0
    for r in range(n):
        for c in range(m):
            w = tiles[t, r, c]
            a1[c] += abs(w)
            s2[c] += w * w


@njit(cache=True, parallel=True)
def column_hoyer(tiles):
    T, n, m = tiles.shape
    out = np.zeros((T, m), dtype=tiles.dtype)
    for t in prange(T):
        a1 = np.empty(m)
        s2 = np.empty(m)
        _column_sums(tiles, t, a1, s2)
        for c in range(m):
            if s2[c] > 0.0:
                out[t, c] = a1[c] * a1[c] / (s2[c] + HOYER_EPS)
    return out


@njit(cache=True)
def _grad_rows(tiles, t, a1, s2, scale, out):
    """``out[t] = scale[c] * dH_s/dw`` for every cell, columns with scale 0 skipped."""
    n, m = tiles.shape[1], tiles.shape[2]
    p = np.empty(m)
    q = np.empty(m)
    for c in range(m):
        den = (s2[c] + HOYER_EPS) * (s2[c] + HOYER_EPS)
        p[c] = scale[c] * 2.0 * a1[c] * s2[c] / den
        q[c] = scale[c] * 2.0 * a1[c] * a1[c] / den
    for r in range(n):
        for c in range(m):
            w = tiles[t, r, c]
            sg = 0.0
            if w > 0:
                sg = 1.0
            elif w < 0:
                sg = -1.0
            out[t, r, c] = sg * p[c] - w * q[c]


@njit(cache=True, parallel=True)
def column_hoyer_grad(tiles):
    T, n, m = tiles.shape
    out = np.zeros_like(tiles)
    for t in prange(T):
        a1 = np.empty(m)
        s2 = np.empty(m)
        _column_sums(tiles, t, a1, s2)
        _grad_rows(tiles, t, a1, s2, np.ones(m), out)
    return out


@njit(cache=True, parallel=True)
def gated_variance(tiles, ncols):
    T, n, m = tiles.shape
    values = np.zeros(T, dtype=np.float64)
    grad = np.zeros_like(tiles)
    for t in prange(T):
        C = ncols[t]
        a1 = np.empty(m)
        s2 = np.empty(m)
        _column_sums(tiles, t, a1, s2)
        hs = np.zeros(m)
        for c in range(C):
            if s2[c] > 0.0:
                hs[c] = a1[c] * a1[c] / (s2[c] + HOYER_EPS)
        mu = hs[:C].sum() / C
        acc = 0.0
        gate = np.zeros(m)
        for c in range(C):
            d = hs[c] - mu
            acc += d * d
            if hs[c] > mu:
                gate[c] = 2.0 * d
        values[t] = acc
        _grad_rows(tiles, t, a1, s2, gate, grad)
    return values, grad


@njit(cache=True)
def _kth_largest(buf, k):
    """Value of the ``k``-th largest entry (1-based); ``buf`` is scrambled."""
    lo, hi = 0, buf.shape[0] - 1
    want = k - 1
    while lo < hi:
        pivot = buf[(lo + hi) // 2]
        i, j = lo, hi
        while i <= j:
            while buf[i] > pivot:
                i += 1
            while buf[j] < pivot:
                j -= 1
            if i <= j:
                tmp = buf[i]
                buf[i] = buf[j]
                buf[j] = tmp
                i += 1
                j -= 1
        if want <= j:
            hi = j
        elif want >= i:
            lo = i
        else:
            break
    return buf[want]


@njit(cache=True, parallel=True)
def prune_tiles(tiles, structural, tau, keep_counts, levels):
    T, n, m = tiles.shape
    L = levels.shape[0]
    mask = np.zeros(tiles.shape, dtype=np.bool_)
    level_index = np.zeros(T, dtype=np.int64)
    for t in prange(T):
        # column-major copy of magnitudes; structural cells read as 0
        mag = np.empty((m, n))
        for r in range(n):
            for c in range(m):
                a = abs(tiles[t, r, c])
                mag[c, r] = 0.0 if structural[t, r, c] else a
        zmin = n
        nnz = np.zeros(m, dtype=np.int64)
        for c in range(m):
            z = 0
            for r in range(n):
                a = mag[c, r]
                if a == 0:
                    z += 1
                else:
                    nnz[c] += 1
                    if a < tau:
                        z += 1
            if z < zmin:
                zmin = z
        s = zmin / n
        best = L - 1
        bestd = abs(levels[L - 1] - s)
        for j in range(L - 2, -1, -1):
            d = abs(levels[j] - s)
            if d < bestd:
                bestd = d
                best = j
        level_index[t] = best
        k = keep_counts[best]
        if k == 0:
            continue
        buf = np.empty(n)
        for c in range(m):
            col = mag[c]
            if nnz[c] <= k:
                for r in range(n):
                    mask[t, r, c] = col[r] > 0
                continue
            # k-th largest magnitude: keep everything above it, and the
            # lowest rows among the ties at it
            buf[:] = col
            v = _kth_largest(buf, k)
            left = k
            for r in range(n):
                if col[r] > v:
                    mask[t, r, c] = True
                    left -= 1
            for r in range(n):
                if left == 0:
                    break
                if col[r] == v:
                    mask[t, r, c] = True
                    left -= 1
    return mask, level_index


@njit(cache=True)
def im2col(x, k):
    B, C, H, W = x.shape
    Ho = H - k + 1
    Wo = W - k + 1
    out = np.empty((B * Ho * Wo, C * k * k), dtype=x.dtype)
    for b in range(B):
        for i in range(Ho):
            for j in range(Wo):
                row = (b * Ho + i) * Wo + j
                col = 0
                for c in range(C):
                    for r in range(k):
                        for s in range(k):
                            out[row, col] = x[b, c, i + r, j + s]
                            col += 1
    return out


@njit(cache=True)
def _col2im(cols, B, C, H, W, k):
    Ho = H - k + 1
    Wo = W - k + 1
    out = np.zeros((B, C, H, W), dtype=cols.dtype)
    for b in range(B):
        for i in range(Ho):
            for j in range(Wo):
                row = (b * Ho + i) * Wo + j
                col = 0
                for c in range(C):
                    for r in range(k):
                        for s in range(k):
                            out[b, c, i + r, j + s] += cols[row, col]
                            col += 1
    return out


def col2im(cols, x_shape, k):
    B, C, H, W = x_shape
    return _col2im(cols, B, C, H, W, k)
