"""
Binary checkpoint format:

    b"REMP1"
    u32 tensor count
    per tensor: u32 name length, UTF-8 name, u32 rank, rank x u32 dims,
                raw float32 data
All integers and floats are little-endian. Parameters are held as float64
in memory and stored as float32.
"""
import logging
import struct
from pathlib import Path

import numpy as np

from config.exceptions import CheckpointError
from .models import ModelParams

logger = logging.getLogger(__name__)

MAGIC = b"REMP1"
_U32 = struct.Struct("<I")


def dumps(params):
    tensors = params.named_tensors()
    chunks = [MAGIC, _U32.pack(len(tensors))]
    for name, value in tensors:
        encoded = name.encode("utf-8")
        chunks.append(_U32.pack(len(encoded)))
        chunks.append(encoded)
        chunks.append(_U32.pack(value.ndim))
        chunks.extend(_U32.pack(dim) for dim in value.shape)
        chunks.append(np.ascontiguousarray(value, dtype="<f4").tobytes())
    return b"".join(chunks)


class _Reader:
    def __init__(self, blob):
        self.blob = blob
        self.offset = 0

    def take(self, size):
        if self.offset + size > len(self.blob):
            raise CheckpointError("checkpoint is truncated")
        chunk = self.blob[self.offset:self.offset + size]
        self.offset += size
        return chunk

    def u32(self):
        return _U32.unpack(self.take(_U32.size))[0]


def loads(blob):
    reader = _Reader(blob)
    if reader.take(len(MAGIC)) != MAGIC:
        raise CheckpointError("not a REMP1 checkpoint")
    tensors = []
    for _ in range(reader.u32()):
        name = reader.take(reader.u32()).decode("utf-8")
        shape = tuple(reader.u32() for _ in range(reader.u32()))
        count = int(np.prod(shape)) if shape else 1
        data = np.frombuffer(reader.take(4 * count), dtype="<f4")
        tensors.append((name, data.astype(np.float64).reshape(shape)))
    if reader.offset != len(blob):
        raise CheckpointError(f"{len(blob) - reader.offset} trailing bytes after last tensor")
    try:
        return ModelParams.from_named_tensors(tensors)
    except (KeyError, ValueError) as exc:
        raise CheckpointError(f"checkpoint tensors do not form a model: {exc}") from exc


def save_checkpoint(params, path):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(dumps(params))
    logger.info(f"Checkpoint written to {path}")
    return path


def load_checkpoint(path):
    path = Path(path)
    if not path.exists():
        raise CheckpointError(f"checkpoint {path} does not exist")
    return loads(path.read_bytes())
