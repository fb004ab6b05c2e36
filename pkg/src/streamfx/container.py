"""Single-file checkpoint container: config JSON plus named tensors.

Layout (all integers big-endian, tensor payloads little-endian):

    magic "SFX1"
    u32 config_len, config JSON (UTF-8)
    u32 tensor_count
    per tensor, sorted by name:
        u16 name_len, name (UTF-8)
        u8 dtype tag (see DTYPE_TAGS)
        u8 ndim, ndim * u32 dims
        raw payload, C order

Byte output is a pure function of the inputs (names are sorted, JSON keys
are sorted, no timestamps), so identical state always serializes to
identical bytes.
"""

from __future__ import annotations

import json
import struct

import numpy as np

__all__ = ["ContainerError", "pack_checkpoint", "unpack_checkpoint",
           "save_checkpoint", "load_checkpoint"]

MAGIC = b"SFX1"

DTYPE_TAGS = {np.dtype("float32"): 0, np.dtype("float64"): 1, np.dtype("int64"): 2}
TAG_DTYPES = {v: k for k, v in DTYPE_TAGS.items()}


class ContainerError(ValueError):
    """Malformed or truncated checkpoint data."""


def pack_checkpoint(config: dict, tensors: dict[str, np.ndarray]) -> bytes:
    parts = [MAGIC]
    cfg = json.dumps(config, sort_keys=True, separators=(",", ":")).encode("utf-8")
    parts.append(struct.pack(">I", len(cfg)))
    parts.append(cfg)
    parts.append(struct.pack(">I", len(tensors)))
    for name in sorted(tensors):
        arr = np.asarray(tensors[name])  # keeps 0-d shape; tobytes handles layout
        if arr.dtype not in DTYPE_TAGS:
            raise ContainerError(f"tensor {name!r} has unsupported dtype {arr.dtype}")
        nb = name.encode("utf-8")
        if len(nb) > 0xFFFF:
            raise ContainerError(f"tensor name too long: {len(nb)} bytes")
        parts.append(struct.pack(">H", len(nb)))
        parts.append(nb)
        parts.append(struct.pack(">BB", DTYPE_TAGS[arr.dtype], arr.ndim))
        parts.append(struct.pack(f">{arr.ndim}I", *arr.shape))
        little = arr.astype(arr.dtype.newbyteorder("<"), copy=False)
        parts.append(little.tobytes(order="C"))
    return b"".join(parts)


class _Reader:
    def __init__(self, data: bytes):
        self.data = data
        self.pos = 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.data):
            raise ContainerError(
                f"truncated: wanted {n} bytes at offset {self.pos}, "
                f"have {len(self.data) - self.pos}")
        out = self.data[self.pos:self.pos + n]
        self.pos += n
        return out

    def u8(self):
        return self.take(1)[0]

    def u16(self):
        return struct.unpack(">H", self.take(2))[0]

    def u32(self):
        return struct.unpack(">I", self.take(4))[0]


def unpack_checkpoint(data: bytes) -> tuple[dict, dict[str, np.ndarray]]:
    r = _Reader(data)
    if r.take(4) != MAGIC:
        raise ContainerError(f"bad magic, expected {MAGIC!r}")
    try:
        config = json.loads(r.take(r.u32()).decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise ContainerError(f"config block is not valid JSON: {e}") from e
    tensors: dict[str, np.ndarray] = {}
    for _ in range(r.u32()):
        name = r.take(r.u16()).decode("utf-8")
        tag = r.u8()
        if tag not in TAG_DTYPES:
            raise ContainerError(f"tensor {name!r}: unknown dtype tag {tag}")
        dtype = TAG_DTYPES[tag]
        shape = tuple(r.u32() for _ in range(r.u8()))
        count = int(np.prod(shape, dtype=np.int64)) if shape else 1
        raw = r.take(count * dtype.itemsize)
        arr = np.frombuffer(raw, dtype=dtype.newbyteorder("<")).astype(dtype).reshape(shape)
        tensors[name] = arr
    if r.pos != len(data):
        raise ContainerError(f"{len(data) - r.pos} trailing bytes after last tensor")
    return config, tensors


def save_checkpoint(path, config: dict, tensors: dict[str, np.ndarray]) -> None:
    blob = pack_checkpoint(config, tensors)
    with open(path, "wb") as f:
        f.write(blob)


def load_checkpoint(path) -> tuple[dict, dict[str, np.ndarray]]:
    with open(path, "rb") as f:
        return unpack_checkpoint(f.read())
