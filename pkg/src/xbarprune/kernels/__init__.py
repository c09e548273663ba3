"""Hot per-tile kernels with a numba backend and a pure-numpy fallback.

The backend is picked once at import time: numba when it imports and the
environment variable ``XBARPRUNE_NUMBA`` is not ``0``; numpy otherwise.
``XBARPRUNE_THREADS`` caps the numba worker pool. :func:`set_backend` switches
at runtime (used by the benchmark and the backend-agreement tests).
"""

import logging
import os

import numpy as np

from . import _numpy

log = logging.getLogger(__name__)

# the bundled TBB is too old for numba; pick the portable pool up front
os.environ.setdefault("NUMBA_THREADING_LAYER", "workqueue")

try:
    from . import _numba
except ImportError:  # pragma: no cover - numba is optional
    _numba = None

_impl = _numpy


def available_backends():
    return ["numpy"] + (["numba"] if _numba is not None else [])


def backend():
    return "numba" if _impl is _numba else "numpy"


def set_backend(name):
    global _impl
    if name == "numba":
        if _numba is None:
            raise RuntimeError("numba backend requested but numba is not importable")
        _impl = _numba
    elif name == "numpy":
        _impl = _numpy
    else:
        raise ValueError(f"unknown backend {name!r}")


def _configure():
    threads = os.environ.get("XBARPRUNE_THREADS")
    if _numba is not None and threads:
        import numba

        try:
            cap = int(threads)
        except ValueError:
            log.warning("ignoring XBARPRUNE_THREADS=%r (not an integer)", threads)
        else:
            numba.set_num_threads(max(1, min(cap, numba.config.NUMBA_NUM_THREADS)))
    if _numba is not None and os.environ.get("XBARPRUNE_NUMBA", "1") != "0":
        set_backend("numba")
    log.debug("kernel backend: %s", backend())


_configure()


def column_hoyer(tiles):
    """Hoyer-Square of every column of every tile, shape ``(T, n)``."""
    return _impl.column_hoyer(np.ascontiguousarray(tiles))


def column_hoyer_grad(tiles):
    return _impl.column_hoyer_grad(np.ascontiguousarray(tiles))


def gated_variance(tiles, ncols):
    """Per-tile variance values and gated gradient (tile mean held constant)."""
    values, grad = _impl.gated_variance(
        np.ascontiguousarray(tiles), np.ascontiguousarray(ncols, dtype=np.int64)
    )
    return np.asarray(values, dtype=np.float64), grad


def prune_tiles(tiles, structural, tau, keep_counts, levels):
    tiles = np.ascontiguousarray(tiles)
    tau = tiles.dtype.type(tau)
    return _impl.prune_tiles(
        tiles,
        np.ascontiguousarray(structural, dtype=np.bool_),
        tau,
        np.ascontiguousarray(keep_counts, dtype=np.int64),
        np.ascontiguousarray(levels, dtype=np.float64),
    )


def im2col(x, k):
    return _impl.im2col(np.ascontiguousarray(x), k)


def col2im(cols, x_shape, k):
    return _impl.col2im(np.ascontiguousarray(cols), tuple(x_shape), k)
