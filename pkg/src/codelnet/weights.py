"""
Weights file I/O.

Layout (all integers little-endian):
    magic "CDW1" | version u16 | parameter count u32
    per parameter: name length u32 | UTF-8 name | rank u32 | dims u32 x rank | float32 data
"""

import struct
from pathlib import Path
from typing import Union

import numpy as np

from .network import Network, NetworkConfig, build_network

MAGIC = b"CDW1"
VERSION = 1

_HEADER = struct.Struct("<4sHI")
_U32 = struct.Struct("<I")


class WeightsFormatError(Exception):
    """Weights file is corrupt or of an unknown format."""

    pass


class WeightsMismatchError(Exception):
    """Weights file does not fit the configured network."""

    pass


def save_weights(net: Network, path: Union[str, Path]) -> Path:
    """
    Write every parameter of `net` in network order.

    Returns:
        The path written
    """
    path = Path(path)
    chunks = [_HEADER.pack(MAGIC, VERSION, len(net.parameters))]
    for param in net.parameters:
        name = param.name.encode("utf-8")
        data = np.ascontiguousarray(param.data, dtype="<f4")
        chunks.append(_U32.pack(len(name)))
        chunks.append(name)
        chunks.append(_U32.pack(data.ndim))
        chunks.append(struct.pack(f"<{data.ndim}I", *data.shape))
        chunks.append(data.tobytes())
    path.write_bytes(b"".join(chunks))
    return path


class _Reader:
    def __init__(self, buf: bytes, path: Path):
        self.buf = buf
        self.pos = 0
        self.path = path

    def take(self, size: int, what: str) -> bytes:
        end = self.pos + size
        if end > len(self.buf):
            raise WeightsFormatError(
                f"{self.path}: truncated while reading {what} "
                f"(need {size} bytes at offset {self.pos}, file has {len(self.buf)})"
            )
        chunk = self.buf[self.pos:end]
        self.pos = end
        return chunk

    def u32(self, what: str) -> int:
        return _U32.unpack(self.take(_U32.size, what))[0]


def read_weights(path: Union[str, Path]) -> list[tuple[str, np.ndarray]]:
    """
    Parse a weights file into (name, float32 array) pairs in file order.

    The whole file is validated before anything is returned.

    Raises:
        WeightsFormatError: Bad magic, unknown version, truncation or trailing bytes
    """
    path = Path(path)
    reader = _Reader(path.read_bytes(), path)
    magic, version, count = _HEADER.unpack(reader.take(_HEADER.size, "header"))
    if magic != MAGIC:
        raise WeightsFormatError(f"{path}: bad magic {magic!r}, expected {MAGIC!r}")
    if version != VERSION:
        raise WeightsFormatError(f"{path}: unsupported version {version}, expected {VERSION}")

    entries = []
    for index in range(count):
        name_len = reader.u32(f"name length of parameter {index}")
        try:
            name = reader.take(name_len, f"name of parameter {index}").decode("utf-8")
        except UnicodeDecodeError as e:
            raise WeightsFormatError(f"{path}: parameter {index} name is not UTF-8: {e}")
        rank = reader.u32(f"rank of {name}")
        if rank > 8:
            raise WeightsFormatError(f"{path}: parameter {name} has implausible rank {rank}")
        dims = struct.unpack(f"<{rank}I", reader.take(4 * rank, f"dims of {name}"))
        size = int(np.prod(dims, dtype=np.int64))
        raw = reader.take(4 * size, f"data of {name}")
        entries.append((name, np.frombuffer(raw, dtype="<f4").reshape(dims).astype(np.float32)))

    if reader.pos != len(reader.buf):
        raise WeightsFormatError(
            f"{path}: {len(reader.buf) - reader.pos} trailing bytes after {count} parameters"
        )
    return entries


def load_weights(path: Union[str, Path], config: NetworkConfig) -> Network:
    """
    Build a network for `config` and fill it from a weights file.

    Raises:
        WeightsFormatError: If the file is malformed
        WeightsMismatchError: If names, order or shapes differ from `config`;
                              names the first offending parameter
    """
    entries = read_weights(path)
    net = build_network(config)
    if len(entries) != len(net.parameters):
        raise WeightsMismatchError(
            f"{path}: file holds {len(entries)} parameters, network expects {len(net.parameters)}"
        )
    for (name, array), param in zip(entries, net.parameters):
        if name != param.name:
            raise WeightsMismatchError(
                f"{path}: found parameter {name!r} where {param.name!r} was expected"
            )
        if array.shape != param.shape:
            raise WeightsMismatchError(
                f"{path}: parameter {name} has shape {array.shape}, "
                f"network expects {param.shape}"
            )
    for (_, array), param in zip(entries, net.parameters):
        param.data = array
    return net
