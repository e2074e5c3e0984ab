"""
Utility functions for codelnet.
"""

from typing import Iterator, Sequence, TypeVar, Union

import numpy as np

from .hash import stream_key

T = TypeVar("T")


def derive_rng(master_seed: int, *keys: Union[int, str]) -> np.random.Generator:
    """
    Build an independent random generator for one keyed stream.

    The stream is a pure function of (master_seed, keys), so e.g. the
    augmentation draw for (epoch, sample, copy) is the same no matter which
    worker computes it or in which order.

    Args:
        master_seed: Non-negative run seed
        keys: Stream identifiers; strings are hashed to 64-bit integers

    Returns:
        A numpy Generator seeded from the combined entropy
    """
    if master_seed < 0:
        raise ValueError(f"Seed must be non-negative, got {master_seed}")
    entropy = [int(master_seed)]
    for key in keys:
        entropy.append(stream_key(key) if isinstance(key, str) else int(key))
    return np.random.default_rng(np.random.SeedSequence(entropy))


def batched(items: Sequence[T], size: int) -> Iterator[Sequence[T]]:
    """Yield consecutive slices of `size` items; the last one may be shorter."""
    if size < 1:
        raise ValueError(f"Batch size must be positive, got {size}")
    for start in range(0, len(items), size):
        yield items[start:start + size]
