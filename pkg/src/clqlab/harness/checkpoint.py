"""Binary checkpoint format.

Layout (little-endian)::

    b"CLQ1"
    u32 config length, config document (utf-8)
    u64 iteration
    repeated tensor records:
        u32 name length, name (utf-8), u32 rank, rank x u64 dims,
        prod(dims) x f64 values
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from clqlab.harness import config as config_mod

MAGIC = b"CLQ1"


class CheckpointError(ValueError):
    pass


@dataclass
class Checkpoint:
    config: config_mod.RunConfig
    tensors: dict[str, np.ndarray]
    iteration: int = 0
    version: int = 1


def save_checkpoint(ckpt: Checkpoint, path):
    doc = config_mod.serialize(ckpt.config).encode()
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", len(doc)))
        fh.write(doc)
        fh.write(struct.pack("<Q", int(ckpt.iteration)))
        for name, arr in ckpt.tensors.items():
            raw = name.encode()
            arr = np.asarray(arr, dtype="<f8")
            fh.write(struct.pack("<I", len(raw)))
            fh.write(raw)
            fh.write(struct.pack("<I", arr.ndim))
            fh.write(struct.pack(f"<{arr.ndim}Q", *arr.shape))
            fh.write(np.ascontiguousarray(arr).tobytes())


def _read(fh, n: int) -> bytes:
    buf = fh.read(n)
    if len(buf) != n:
        raise CheckpointError("truncated checkpoint")
    return buf


def load_checkpoint(path) -> Checkpoint:
    with open(path, "rb") as fh:
        magic = fh.read(4)
        if magic != MAGIC:
            raise CheckpointError(f"unsupported checkpoint format {magic!r} (expected {MAGIC!r})")
        (doc_len,) = struct.unpack("<I", _read(fh, 4))
        cfg = config_mod.parse(_read(fh, doc_len).decode())
        (iteration,) = struct.unpack("<Q", _read(fh, 8))
        tensors = {}
        while True:
            head = fh.read(4)
            if not head:
                break
            if len(head) != 4:
                raise CheckpointError("truncated checkpoint")
            (name_len,) = struct.unpack("<I", head)
            name = _read(fh, name_len).decode()
            (rank,) = struct.unpack("<I", _read(fh, 4))
            dims = struct.unpack(f"<{rank}Q", _read(fh, 8 * rank)) if rank else ()
            count = int(np.prod(dims)) if rank else 1
            arr = np.frombuffer(_read(fh, 8 * count), dtype="<f8").astype(np.float64)
            tensors[name] = arr.reshape(dims)
    return Checkpoint(cfg, tensors, iteration)
