"""Binary checkpoint format.

Layout, all integers unsigned 32-bit little-endian::

    b"SCNW" | version | config length | config JSON (UTF-8)
    | tensor count
    | per tensor: name length | name (UTF-8) | rank | dims... | float32 LE payload

Tensors are written in lexicographic name order.
"""

from __future__ import annotations

import json
import struct

import numpy as np

from . import tensor as T
from .errors import FormatError
from .models import ModelConfig, WeightStore

MAGIC = b"SCNW"
VERSION = 1
_U32 = struct.Struct("<I")


def dumps(w: WeightStore, cfg: ModelConfig) -> bytes:
    blob = json.dumps(cfg.to_dict(), sort_keys=True).encode("utf-8")
    parts = [MAGIC, _U32.pack(VERSION), _U32.pack(len(blob)), blob, _U32.pack(len(w))]
    for name in sorted(w):
        data = np.ascontiguousarray(w[name].data, dtype="<f4")
        encoded = name.encode("utf-8")
        parts += [_U32.pack(len(encoded)), encoded, _U32.pack(data.ndim)]
        parts += [_U32.pack(d) for d in data.shape]
        parts.append(data.tobytes())
    return b"".join(parts)


class _Reader:
    def __init__(self, buf: bytes):
        self.buf = buf
        self.pos = 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.buf):
            raise FormatError(f"truncated checkpoint: needed {n} bytes at offset {self.pos}")
        out = self.buf[self.pos : self.pos + n]
        self.pos += n
        return out

    def u32(self) -> int:
        return _U32.unpack(self.take(4))[0]


def loads(buf: bytes) -> tuple:
    """Parse a checkpoint; nothing is returned unless the whole file is valid."""
    r = _Reader(buf)
    if r.take(4) != MAGIC:
        raise FormatError("bad checkpoint magic")
    version = r.u32()
    if version != VERSION:
        raise FormatError(f"unsupported checkpoint version {version} (expected {VERSION})")
    try:
        cfg = ModelConfig.from_dict(json.loads(r.take(r.u32()).decode("utf-8")))
    except (UnicodeDecodeError, json.JSONDecodeError, TypeError) as e:
        raise FormatError(f"corrupt config blob: {e}") from e
    entries = {}
    for _ in range(r.u32()):
        try:
            name = r.take(r.u32()).decode("utf-8")
        except UnicodeDecodeError as e:
            raise FormatError("corrupt tensor name") from e
        dims = tuple(r.u32() for _ in range(r.u32()))
        count = int(np.prod(dims, dtype=np.int64))
        data = np.frombuffer(r.take(4 * count), dtype="<f4").reshape(dims)
        if name in entries:
            raise FormatError(f"duplicate tensor {name!r}")
        entries[name] = T.Tensor(data.astype(np.float32))
    if r.pos != len(buf):
        raise FormatError(f"{len(buf) - r.pos} trailing bytes after last tensor")
    return WeightStore(entries), cfg


def save_checkpoint(w: WeightStore, cfg: ModelConfig, path) -> None:
    with open(path, "wb") as f:
        f.write(dumps(w, cfg))


def load_checkpoint(path) -> tuple:
    with open(path, "rb") as f:
        return loads(f.read())
