"""Binary checkpoints: model parameters plus their config, round-trip exact.

Layout (little-endian throughout):

    magic "STKF" | version u32 | config length u32 | config utf-8 key=value
    lines | parameter count u32 | per parameter: name length u16, name bytes,
    rank u8, one u32 per dim, then float64 data in row-major order.
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from .errors import CorruptCheckpointError
from .model import ModelConfig

_MAGIC = b"STKF"
_VERSION = 1


def save_checkpoint(params: dict[str, np.ndarray], config: ModelConfig, path) -> None:
    config_text = "\n".join(f"{k}={v}" for k, v in config.to_kv().items()) + "\n"
    blob = config_text.encode("utf-8")
    out = bytearray()
    out += _MAGIC
    out += struct.pack("<I", _VERSION)
    out += struct.pack("<I", len(blob))
    out += blob
    out += struct.pack("<I", len(params))
    for name, arr in params.items():
        arr = np.asarray(arr, dtype=np.float64)
        nb = name.encode("utf-8")
        out += struct.pack("<H", len(nb))
        out += nb
        out += struct.pack("<B", arr.ndim)
        out += struct.pack(f"<{arr.ndim}I", *arr.shape)
        out += arr.astype("<f8").tobytes(order="C")
    Path(path).write_bytes(bytes(out))


class _Reader:
    def __init__(self, raw: bytes, path):
        self.raw = raw
        self.off = 0
        self.path = path

    def take(self, n: int, what: str) -> bytes:
        if self.off + n > len(self.raw):
            raise CorruptCheckpointError(f"{self.path}: truncated while reading {what}", self.off)
        chunk = self.raw[self.off:self.off + n]
        self.off += n
        return chunk

    def unpack(self, fmt: str, what: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt), what))


def load_checkpoint(path) -> tuple[dict[str, np.ndarray], ModelConfig]:
    """Read a checkpoint back as (ordered params, model config)."""
    r = _Reader(Path(path).read_bytes(), path)
    if r.take(4, "magic") != _MAGIC:
        raise CorruptCheckpointError(f"{path}: bad magic", 0)
    version, = r.unpack("<I", "version")
    if version != _VERSION:
        raise CorruptCheckpointError(f"{path}: unsupported version {version}", 4)
    clen, = r.unpack("<I", "config length")
    config_text = r.take(clen, "config block").decode("utf-8")
    kv = {}
    for line in config_text.splitlines():
        if line.strip():
            k, _, v = line.partition("=")
            kv[k] = v
    config = ModelConfig.from_kv(kv)
    count, = r.unpack("<I", "parameter count")
    params: dict[str, np.ndarray] = {}
    for _ in range(count):
        nlen, = r.unpack("<H", "name length")
        name = r.take(nlen, "name").decode("utf-8")
        rank, = r.unpack("<B", "rank")
        dims = r.unpack(f"<{rank}I", f"dims of {name}")
        n_vals = int(np.prod(dims))
        data = r.take(8 * n_vals, f"data of {name}")
        params[name] = np.frombuffer(data, dtype="<f8").astype(np.float64).reshape(dims)
    if r.off != len(r.raw):
        raise CorruptCheckpointError(f"{path}: {len(r.raw) - r.off} trailing bytes", r.off)
    return params, config
