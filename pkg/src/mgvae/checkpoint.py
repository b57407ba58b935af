"""Checkpoint container: named float64 tensors in a single binary file.

Layout: 8-byte magic "MGVAEv01", then per record
  uint32 name length | UTF-8 name | uint32 axis count | uint64 axis sizes
  | little-endian float64 payload.
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from .tensor import Tensor

MAGIC = b"MGVAEv01"


class CheckpointError(IOError):
    pass


def save_checkpoint(path, tensors: dict[str, Tensor]) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as f:
        f.write(MAGIC)
        for name in sorted(tensors):
            data = np.ascontiguousarray(tensors[name].data, dtype="<f8")
            enc = name.encode("utf-8")
            f.write(struct.pack("<I", len(enc)))
            f.write(enc)
            f.write(struct.pack("<I", data.ndim))
            f.write(struct.pack(f"<{data.ndim}Q", *data.shape))
            f.write(data.tobytes())


def load_checkpoint(path) -> dict[str, Tensor]:
    path = Path(path)
    with open(path, "rb") as f:
        if f.read(8) != MAGIC:
            raise CheckpointError(f"{path}: bad magic header")
        out: dict[str, Tensor] = {}
        while True:
            head = f.read(4)
            if not head:
                return out
            (nlen,) = struct.unpack("<I", head)
            name = f.read(nlen).decode("utf-8")
            (ndim,) = struct.unpack("<I", f.read(4))
            shape = struct.unpack(f"<{ndim}Q", f.read(8 * ndim))
            count = int(np.prod(shape)) if shape else 1
            raw = f.read(8 * count)
            if len(raw) != 8 * count:
                raise CheckpointError(f"{path}: truncated record {name!r}")
            data = np.frombuffer(raw, dtype="<f8").reshape(shape)
            out[name] = Tensor(np.array(data), track=True)
