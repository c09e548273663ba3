"""Dataset ingestion: IDX files and seeded synthetic blobs."""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

IMAGE_MAGIC = 0x00000803
LABEL_MAGIC = 0x00000801


class DataError(ValueError):
    pass


@dataclass
class Dataset:
    x_train: np.ndarray
    y_train: np.ndarray
    x_test: np.ndarray
    y_test: np.ndarray
    n_classes: int

    @property
    def input_shape(self):
        return self.x_train.shape[1:]


def _read(buf, offset, fmt, path):
    size = struct.calcsize(fmt)
    if offset + size > len(buf):
        raise DataError(f"{path}: truncated at offset {offset}")
    return struct.unpack_from(fmt, buf, offset)


def read_idx_images(path):
    with open(path, "rb") as f:
        buf = f.read()
    (magic,) = _read(buf, 0, ">I", path)
    if magic != IMAGE_MAGIC:
        raise DataError(f"{path}: bad magic 0x{magic:08x} at offset 0, expected 0x{IMAGE_MAGIC:08x}")
    count, rows, cols = _read(buf, 4, ">III", path)
    need = 16 + count * rows * cols
    if len(buf) < need:
        raise DataError(f"{path}: truncated at offset {len(buf)}, header promises {need} bytes")
    return np.frombuffer(buf, dtype=np.uint8, count=count * rows * cols, offset=16).reshape(count, rows, cols)


def read_idx_labels(path):
    with open(path, "rb") as f:
        buf = f.read()
    (magic,) = _read(buf, 0, ">I", path)
    if magic != LABEL_MAGIC:
        raise DataError(f"{path}: bad magic 0x{magic:08x} at offset 0, expected 0x{LABEL_MAGIC:08x}")
    (count,) = _read(buf, 4, ">I", path)
    if len(buf) < 8 + count:
        raise DataError(f"{path}: truncated at offset {len(buf)}, header promises {8 + count} bytes")
    return np.frombuffer(buf, dtype=np.uint8, count=count, offset=8)


def load_idx(images_path, labels_path, limit=None):
    """Images as ``(count, 1, rows, cols)`` floats in [0, 1] and integer labels."""
    images = read_idx_images(images_path)
    labels = read_idx_labels(labels_path)
    if len(images) != len(labels):
        raise DataError(
            f"count mismatch: {images_path} has {len(images)} images, "
            f"{labels_path} has {len(labels)} labels"
        )
    if limit is not None:
        images, labels = images[:limit], labels[:limit]
    x = (images.astype(np.float32) / 255.0)[:, None]
    return x, labels.astype(np.int64)


def write_idx(images_path, labels_path, images, labels):
    """Write uint8 images ``(count, rows, cols)`` and labels in IDX format."""
    images = np.asarray(images, dtype=np.uint8)
    labels = np.asarray(labels, dtype=np.uint8)
    with open(images_path, "wb") as f:
        f.write(struct.pack(">IIII", IMAGE_MAGIC, *images.shape))
        f.write(images.tobytes())
    with open(labels_path, "wb") as f:
        f.write(struct.pack(">II", LABEL_MAGIC, len(labels)))
        f.write(labels.tobytes())


def synth_data(classes=10, dims=(2, 12, 12), count=2000, seed=0, separation=1.0,
               noise=1.0, smooth=0):
    """Seeded Gaussian blobs, one per class; labels assigned round-robin.

    Class centres are standard normal vectors scaled by ``separation``;
    samples add isotropic noise of scale ``noise``. ``smooth`` box-filters the
    centres over the last two axes so image-shaped data has local structure.
    """
    if classes < 1 or count < 1 or min(dims) < 1:
        raise ValueError("classes, count and dims must be positive")
    rng = np.random.default_rng(seed)
    dims = tuple(dims)
    centres = rng.standard_normal((classes,) + dims)
    if smooth and len(dims) >= 2:
        for _ in range(smooth):
            c = centres
            centres = (c + np.roll(c, 1, -1) + np.roll(c, -1, -1) + np.roll(c, 1, -2) + np.roll(c, -1, -2)) / 5
        centres /= centres.std(axis=tuple(range(1, centres.ndim)), keepdims=True)
    centres *= separation
    labels = np.arange(count) % classes
    rng.shuffle(labels)
    x = centres[labels] + noise * rng.standard_normal((count,) + dims)
    return x.astype(np.float32), labels.astype(np.int64)


def split(x, y, n_classes, test_fraction=0.25):
    n_test = int(round(len(x) * test_fraction))
    return Dataset(x[n_test:], y[n_test:], x[:n_test], y[:n_test], n_classes)
