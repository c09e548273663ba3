"""Binary weight checkpoints (``XBWT``).

Layout, little-endian unless noted::

    b"XBWT"  u16 version  u16 record count
    per record:
        u16 name length, UTF-8 name
        u8 kind (0 dense, 1 conv, 2 bias)
        u32 dims (dense: fan_in fan_out; conv: O I k; bias: length)
        f32 values, row-major flattened layout
        u8 mask flag, then ceil(count / 8) bytes of mask bits (LSB first)

Biases are stored as their own ``bias`` records named ``<layer>.bias``.
"""

from __future__ import annotations

import struct

import numpy as np

MAGIC = b"XBWT"
VERSION = 1
KIND_CODES = {"dense": 0, "conv": 1, "bias": 2}
KIND_NAMES = {v: k for k, v in KIND_CODES.items()}
N_DIMS = {"dense": 2, "conv": 3, "bias": 1}


class CheckpointError(ValueError):
    pass


def _record(name, kind, dims, values, mask):
    nb = name.encode("utf-8")
    out = [struct.pack("<H", len(nb)), nb, struct.pack("<B", KIND_CODES[kind])]
    out.append(struct.pack(f"<{len(dims)}I", *dims))
    out.append(np.ascontiguousarray(values, dtype="<f4").tobytes())
    if mask is None:
        out.append(b"\x00")
    else:
        out.append(b"\x01")
        out.append(np.packbits(np.asarray(mask, dtype=bool).ravel(), bitorder="little").tobytes())
    return b"".join(out)


def dumps(net) -> bytes:
    records = []
    for layer in net.param_layers():
        records.append(_record(layer.name, layer.kind, layer.shape.dims, layer.W, net.masks.get(layer.name)))
        records.append(_record(layer.name + ".bias", "bias", (layer.b.size,), layer.b, None))
    return MAGIC + struct.pack("<HH", VERSION, len(records)) + b"".join(records)


def save(net, path):
    with open(path, "wb") as f:
        f.write(dumps(net))


def loads(buf: bytes) -> list[dict]:
    """Parse into records ``{name, kind, dims, values, mask}``."""
    pos = 0

    def take(n):
        nonlocal pos
        if pos + n > len(buf):
            raise CheckpointError(f"checkpoint truncated at offset {pos}")
        chunk = buf[pos:pos + n]
        pos += n
        return chunk

    if take(4) != MAGIC:
        raise CheckpointError("not an XBWT checkpoint (bad magic at offset 0)")
    version, count = struct.unpack("<HH", take(4))
    if version != VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}")
    records = []
    for _ in range(count):
        (ln,) = struct.unpack("<H", take(2))
        name = take(ln).decode("utf-8")
        (code,) = struct.unpack("<B", take(1))
        if code not in KIND_NAMES:
            raise CheckpointError(f"unknown layer kind {code} at offset {pos - 1}")
        kind = KIND_NAMES[code]
        dims = struct.unpack(f"<{N_DIMS[kind]}I", take(4 * N_DIMS[kind]))
        if kind == "conv":
            shape = (dims[2] * dims[2] * dims[1], dims[0])
        elif kind == "dense":
            shape = (dims[0], dims[1])
        else:
            shape = (dims[0],)
        size = int(np.prod(shape))
        values = np.frombuffer(take(4 * size), dtype="<f4").reshape(shape).astype(np.float32)
        (flag,) = struct.unpack("<B", take(1))
        mask = None
        if flag:
            bits = np.frombuffer(take((size + 7) // 8), dtype=np.uint8)
            mask = np.unpackbits(bits, count=size, bitorder="little").astype(bool).reshape(shape)
        records.append({"name": name, "kind": kind, "dims": dims, "values": values, "mask": mask})
    if pos != len(buf):
        raise CheckpointError(f"trailing bytes after offset {pos}")
    return records


def load_records(path) -> list[dict]:
    with open(path, "rb") as f:
        return loads(f.read())


def load_into(net, path):
    """Fill ``net`` (built from the same architecture) from a checkpoint."""
    recs = {r["name"]: r for r in load_records(path)}
    masks = {}
    for layer in net.param_layers():
        for key in (layer.name, layer.name + ".bias"):
            if key not in recs:
                raise CheckpointError(f"checkpoint has no record {key!r}")
        r = recs[layer.name]
        if r["kind"] != layer.kind or tuple(r["dims"]) != tuple(layer.shape.dims):
            raise CheckpointError(
                f"layer {layer.name!r}: checkpoint has {r['kind']} {r['dims']}, "
                f"network has {layer.kind} {layer.shape.dims}"
            )
        layer.W = r["values"].astype(net.dtype)
        layer.b = recs[layer.name + ".bias"]["values"].astype(net.dtype)
        if r["mask"] is not None:
            masks[layer.name] = r["mask"]
    net.masks = {}
    if masks:
        net.set_masks(masks)
    return net
