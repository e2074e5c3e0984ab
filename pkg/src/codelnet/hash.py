"""
Fingerprinting utilities using XXHash64.

Used for weight-file fingerprints, parameter checksums (build determinism)
and for turning textual RNG stream tags into stable integer keys.
"""

from pathlib import Path
from typing import TYPE_CHECKING, Callable, Iterable, Optional

import numpy as np
import xxhash

if TYPE_CHECKING:
    from .tensor import Parameter

# Default chunk size for reading files (1MB)
DEFAULT_CHUNK_SIZE = 1024 * 1024


def hash_file(
    filepath: Path,
    chunk_size: int = DEFAULT_CHUNK_SIZE,
    progress_callback: Optional[Callable[[int, int], None]] = None,
) -> str:
    """
    Calculate XXHash64 of a file.

    Args:
        filepath: Path to file to hash
        chunk_size: Size of chunks to read
        progress_callback: Optional callback(bytes_read, total_bytes) for progress

    Returns:
        Hex string of the hash (16 characters)
    """
    hasher = xxhash.xxh64()
    file_size = filepath.stat().st_size
    bytes_read = 0

    with open(filepath, "rb") as f:
        while chunk := f.read(chunk_size):
            hasher.update(chunk)
            bytes_read += len(chunk)
            if progress_callback:
                progress_callback(bytes_read, file_size)

    return hasher.hexdigest()


def hash_bytes(data: bytes) -> str:
    """Calculate XXHash64 of bytes as a hex string."""
    return xxhash.xxh64(data).hexdigest()


def hash_array(array: np.ndarray) -> str:
    """
    Calculate XXHash64 of an array's dtype, shape and raw little-endian bytes.

    Two arrays hash equal iff they are bit-identical with the same shape.
    """
    arr = np.asarray(array, order="C")
    le = arr.astype(arr.dtype.newbyteorder("<"), copy=False)
    return hash_bytes(f"{le.dtype.str}{le.shape}".encode("ascii") + le.tobytes())


def parameter_checksum(parameters: Iterable["Parameter"]) -> str:
    """
    Checksum an ordered parameter set (names, shapes and values).

    Args:
        parameters: Parameters in network order

    Returns:
        Hex string of the combined hash
    """
    hasher = xxhash.xxh64()
    for param in parameters:
        hasher.update(param.name.encode("utf-8"))
        hasher.update(hash_array(param.data).encode("ascii"))
    return hasher.hexdigest()


def stream_key(tag: str) -> int:
    """Map a textual RNG stream tag to a stable unsigned 64-bit integer."""
    return xxhash.xxh64_intdigest(tag.encode("utf-8"))


def verify_hash(filepath: Path, expected_hash: str) -> bool:
    """
    Verify a file matches an expected hash.

    Args:
        filepath: Path to file to verify
        expected_hash: Expected XXHash64 hex string

    Returns:
        True if hash matches, False otherwise
    """
    actual_hash = hash_file(filepath)
    return actual_hash.lower() == expected_hash.strip().lower()
