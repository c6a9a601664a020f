"""Flat binary checkpoints: name -> shape -> float64 values.

Byte layout (all integers little-endian, no compression, no timestamps, so
identical inputs produce identical files):

    magic   4 bytes  b"CSG1"
    count   uint32   number of entries
    entry*  repeated, sorted by name:
        name_len  uint16
        name      name_len bytes, UTF-8
        ndim      uint8
        shape     ndim * uint32
        data      prod(shape) * float64, little-endian, C order

load(save(p)) reproduces p bitwise.
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from ..errors import CheckpointError

MAGIC = b"CSG1"


def save_checkpoint(path: Path, arrays: dict[str, np.ndarray]) -> None:
    chunks = [MAGIC, struct.pack("<I", len(arrays))]
    for name in sorted(arrays):
        data = np.ascontiguousarray(arrays[name], dtype=np.float64)
        encoded = name.encode("utf-8")
        chunks.append(struct.pack("<H", len(encoded)))
        chunks.append(encoded)
        chunks.append(struct.pack("<B", data.ndim))
        chunks.append(struct.pack(f"<{data.ndim}I", *data.shape))
        chunks.append(data.astype("<f8").tobytes())
    Path(path).write_bytes(b"".join(chunks))


def load_checkpoint(path: Path) -> dict[str, np.ndarray]:
    blob = Path(path).read_bytes()
    if blob[:4] != MAGIC:
        raise CheckpointError(f"{path}: not a checkpoint file (bad magic)")
    off = 4
    try:
        (count,) = struct.unpack_from("<I", blob, off)
        off += 4
        arrays = {}
        for _ in range(count):
            (name_len,) = struct.unpack_from("<H", blob, off)
            off += 2
            name = blob[off : off + name_len].decode("utf-8")
            off += name_len
            (ndim,) = struct.unpack_from("<B", blob, off)
            off += 1
            shape = struct.unpack_from(f"<{ndim}I", blob, off)
            off += 4 * ndim
            n_bytes = 8 * int(np.prod(shape, dtype=np.int64)) if ndim else 8
            data = np.frombuffer(blob, dtype="<f8", count=n_bytes // 8, offset=off)
            off += n_bytes
            arrays[name] = data.reshape(shape).copy()
    except (struct.error, ValueError) as exc:
        raise CheckpointError(f"{path}: truncated or corrupt checkpoint") from exc
    if off != len(blob):
        raise CheckpointError(f"{path}: {len(blob) - off} trailing bytes")
    return arrays
