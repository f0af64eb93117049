"""Binary checkpoints.

Layout, all integers and floats little-endian::

    magic        8 bytes  b"YFLOWCKP"
    version      u32
    config       u32 length + UTF-8 text
    iteration    u64
    stats        u32 count, then per entry: u16 name length, name, f64 value
    tensors      u32 count, then per tensor: u32 ndim, ndim * u64 extents,
                 prod(extents) f64 values in row-major order
"""
from __future__ import annotations

import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

MAGIC = b"YFLOWCKP"
VERSION = 1


class CheckpointError(ValueError):
    pass


@dataclass
class Checkpoint:
    config_text: str
    iteration: int
    params: list[np.ndarray]
    stats: dict[str, float] = field(default_factory=dict)

    def __eq__(self, other) -> bool:
        if not isinstance(other, Checkpoint):
            return NotImplemented
        return (
            self.config_text == other.config_text
            and self.iteration == other.iteration
            and list(self.stats) == list(other.stats)
            and all(
                np.float64(self.stats[k]).tobytes() == np.float64(other.stats[k]).tobytes()
                for k in self.stats
            )
            and len(self.params) == len(other.params)
            and all(
                a.shape == b.shape and a.tobytes() == b.tobytes()
                for a, b in zip(self.params, other.params)
            )
        )


def to_bytes(ckpt: Checkpoint) -> bytes:
    out = [MAGIC, struct.pack("<I", VERSION)]
    text = ckpt.config_text.encode("utf-8")
    out.append(struct.pack("<I", len(text)) + text)
    out.append(struct.pack("<Q", ckpt.iteration))
    out.append(struct.pack("<I", len(ckpt.stats)))
    for name, value in ckpt.stats.items():
        raw = name.encode("utf-8")
        out.append(struct.pack("<H", len(raw)) + raw + struct.pack("<d", value))
    out.append(struct.pack("<I", len(ckpt.params)))
    for p in ckpt.params:
        p = np.asarray(p, dtype=np.float64)
        out.append(struct.pack("<I", p.ndim) + struct.pack(f"<{p.ndim}Q", *p.shape))
        out.append(np.ascontiguousarray(p, dtype="<f8").tobytes())
    return b"".join(out)


class _Reader:
    def __init__(self, data: bytes):
        self.data = data
        self.pos = 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.data):
            raise CheckpointError("checkpoint is truncated")
        chunk = self.data[self.pos : self.pos + n]
        self.pos += n
        return chunk

    def unpack(self, fmt: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))


def from_bytes(data: bytes) -> Checkpoint:
    r = _Reader(data)
    if r.take(len(MAGIC)) != MAGIC:
        raise CheckpointError("not a checkpoint file (bad magic)")
    (version,) = r.unpack("<I")
    if version != VERSION:
        raise CheckpointError(f"checkpoint format version {version} is not supported; this build reads version {VERSION}")
    (n,) = r.unpack("<I")
    text = r.take(n).decode("utf-8")
    (iteration,) = r.unpack("<Q")
    (n_stats,) = r.unpack("<I")
    stats = {}
    for _ in range(n_stats):
        (k,) = r.unpack("<H")
        name = r.take(k).decode("utf-8")
        (stats[name],) = r.unpack("<d")
    (n_tensors,) = r.unpack("<I")
    params = []
    for _ in range(n_tensors):
        (ndim,) = r.unpack("<I")
        shape = r.unpack(f"<{ndim}Q")
        count = int(np.prod(shape, dtype=np.int64))
        arr = np.frombuffer(r.take(8 * count), dtype="<f8").astype(np.float64).reshape(shape)
        params.append(arr)
    if r.pos != len(data):
        raise CheckpointError("trailing bytes after checkpoint payload")
    return Checkpoint(text, iteration, params, stats)


def save(path, ckpt: Checkpoint) -> None:
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_bytes(to_bytes(ckpt))
    tmp.replace(path)


def load(path) -> Checkpoint:
    try:
        data = Path(path).read_bytes()
    except OSError as exc:
        raise CheckpointError(f"cannot read checkpoint {path}: {exc.strerror}") from None
    return from_bytes(data)
