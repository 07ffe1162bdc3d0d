"""Binary container for feature maps and parameter checkpoints.

Tensor block: 16-byte header (4-byte magic, u32 dtype code, u32 rank,
u32 reserved) followed by rank u32 dims, then row-major float64 payload.
A checkpoint file is a sequence of named tensor blocks behind its own
8-byte header.
"""

from __future__ import annotations

import struct
from typing import BinaryIO

import numpy as np

TENSOR_MAGIC = b"KGT1"
CHECKPOINT_MAGIC = b"KGC1"
DTYPE_FLOAT64 = 1

_HEADER = struct.Struct("<4sIII")
_DIM = struct.Struct("<I")
_CKPT_HEADER = struct.Struct("<4sI")
_NAME_LEN = struct.Struct("<I")


class ContainerError(ValueError):
    """Raised on malformed container files."""


def _write_block(fh: BinaryIO, array: np.ndarray) -> None:
    # tobytes() always emits C order, so no ascontiguousarray (which would
    # promote 0-d arrays to 1-d)
    array = np.asarray(array, dtype=np.float64)
    fh.write(_HEADER.pack(TENSOR_MAGIC, DTYPE_FLOAT64, array.ndim, 0))
    for dim in array.shape:
        fh.write(_DIM.pack(dim))
    fh.write(array.tobytes())


def _read_exact(fh: BinaryIO, count: int) -> bytes:
    data = fh.read(count)
    if len(data) != count:
        raise ContainerError("truncated container file")
    return data


def _read_block(fh: BinaryIO) -> np.ndarray:
    magic, dtype_code, rank, _ = _HEADER.unpack(_read_exact(fh, _HEADER.size))
    if magic != TENSOR_MAGIC:
        raise ContainerError(f"bad tensor magic {magic!r}")
    if dtype_code != DTYPE_FLOAT64:
        raise ContainerError(f"unsupported dtype code {dtype_code}")
    if rank > 8:
        raise ContainerError(f"implausible rank {rank}")
    shape = tuple(_DIM.unpack(_read_exact(fh, _DIM.size))[0] for _ in range(rank))
    count = int(np.prod(shape, dtype=np.int64)) if shape else 1
    payload = _read_exact(fh, count * 8)
    array = np.frombuffer(payload, dtype=np.float64).reshape(shape).copy()
    if not np.all(np.isfinite(array)):
        raise ContainerError("tensor payload contains non-finite entries")
    return array


def write_feature_map(path: str, array: np.ndarray) -> None:
    with open(path, "wb") as fh:
        _write_block(fh, array)


def read_feature_map(path: str) -> np.ndarray:
    with open(path, "rb") as fh:
        return _read_block(fh)


def write_checkpoint(path: str, tensors: dict[str, np.ndarray]) -> None:
    with open(path, "wb") as fh:
        fh.write(_CKPT_HEADER.pack(CHECKPOINT_MAGIC, len(tensors)))
        for name, array in tensors.items():
            encoded = name.encode("utf-8")
            fh.write(_NAME_LEN.pack(len(encoded)))
            fh.write(encoded)
            _write_block(fh, array)


def read_checkpoint(path: str) -> dict[str, np.ndarray]:
    out: dict[str, np.ndarray] = {}
    with open(path, "rb") as fh:
        magic, count = _CKPT_HEADER.unpack(_read_exact(fh, _CKPT_HEADER.size))
        if magic != CHECKPOINT_MAGIC:
            raise ContainerError(f"bad checkpoint magic {magic!r}")
        for _ in range(count):
            name_len = _NAME_LEN.unpack(_read_exact(fh, _NAME_LEN.size))[0]
            name = _read_exact(fh, name_len).decode("utf-8")
            out[name] = _read_block(fh)
    return out
