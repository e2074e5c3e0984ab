"""
Tensor file I/O.

Layout: magic "TSR1" | rank u32 | dims u32 x rank | float32 data, row-major,
everything little-endian.
"""

import struct
from pathlib import Path
from typing import Union

import numpy as np

from .tensor import Tensor

MAGIC = b"TSR1"
MAX_RANK = 8

_U32 = struct.Struct("<I")


class TensorFileError(Exception):
    """Tensor file is malformed or cannot represent the tensor."""

    pass


def write_tensor_file(tensor: Union[Tensor, np.ndarray], path: Union[str, Path]) -> Path:
    """
    Write a tensor bit-exactly as little-endian float32.

    Raises:
        TensorFileError: For rank 0 or rank above 8
    """
    data = tensor.data if isinstance(tensor, Tensor) else np.asarray(tensor)
    if data.ndim == 0:
        raise TensorFileError("Cannot write a rank-0 tensor; rank must be 1..8")
    if data.ndim > MAX_RANK:
        raise TensorFileError(f"Cannot write a rank-{data.ndim} tensor; rank must be 1..8")
    data = np.ascontiguousarray(data, dtype="<f4")
    path = Path(path)
    header = MAGIC + _U32.pack(data.ndim) + struct.pack(f"<{data.ndim}I", *data.shape)
    path.write_bytes(header + data.tobytes())
    return path


def _parse_header(buf: bytes, path: Path) -> tuple[tuple[int, ...], int]:
    if len(buf) < 8:
        raise TensorFileError(f"{path}: file too short for a header ({len(buf)} bytes)")
    if buf[:4] != MAGIC:
        raise TensorFileError(f"{path}: bad magic {buf[:4]!r}, expected {MAGIC!r}")
    rank = _U32.unpack_from(buf, 4)[0]
    if rank == 0 or rank > MAX_RANK:
        raise TensorFileError(f"{path}: rank {rank} outside 1..{MAX_RANK}")
    end = 8 + 4 * rank
    if len(buf) < end:
        raise TensorFileError(f"{path}: header truncated before {rank} dims")
    dims = struct.unpack_from(f"<{rank}I", buf, 8)
    if 0 in dims:
        raise TensorFileError(f"{path}: header has a zero dimension {dims}")
    return tuple(int(d) for d in dims), end


def read_tensor_header(path: Union[str, Path]) -> tuple[int, ...]:
    """Shape recorded in a tensor file, reading only its header."""
    path = Path(path)
    with open(path, "rb") as f:
        head = f.read(8)
        if len(head) == 8 and head[:4] == MAGIC:
            rank = _U32.unpack_from(head, 4)[0]
            head += f.read(4 * min(rank, MAX_RANK))
    shape, _ = _parse_header(head, path)
    return shape


def read_tensor_file(path: Union[str, Path]) -> Tensor:
    """
    Read a tensor file.

    Raises:
        TensorFileError: Bad magic, rank above 8, or data length not matching the header
    """
    path = Path(path)
    buf = path.read_bytes()
    shape, offset = _parse_header(buf, path)
    expected = int(np.prod(shape, dtype=np.int64))
    payload = len(buf) - offset
    if payload != 4 * expected:
        raise TensorFileError(
            f"{path}: header declares {expected} elements {shape}, "
            f"file holds {payload / 4:g}"
        )
    data = np.frombuffer(buf, dtype="<f4", offset=offset).reshape(shape)
    return Tensor(data.astype(np.float32))
