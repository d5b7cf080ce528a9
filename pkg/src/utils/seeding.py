"""Seed splitting.

Every random stream is derived from the master seed and a tuple of keys:
``SeedSequence(entropy=master_seed, spawn_key=encode(keys))``. Integer keys
are used as-is, string keys through CRC32. The same (master, keys) always
yields the same stream, independent of thread scheduling.
"""

import zlib
from typing import Tuple, Union

import numpy as np

Key = Union[int, str]


def _encode(key: Key) -> int:
    if isinstance(key, (bool, np.bool_)):
        return int(key)
    if isinstance(key, (int, np.integer)):
        value = int(key)
        # SeedSequence spawn keys must be non-negative
        return value if value >= 0 else (1 << 32) + (-value)
    return zlib.crc32(str(key).encode("utf-8"))


def spawn_key(*keys: Key) -> Tuple[int, ...]:
    return tuple(_encode(key) for key in keys)


def derive_seed(master_seed: int, *keys: Key) -> int:
    sequence = np.random.SeedSequence(
        entropy=int(master_seed), spawn_key=spawn_key(*keys)
    )
    return int(sequence.generate_state(1, dtype=np.uint32)[0])


def derive_rng(master_seed: int, *keys: Key) -> np.random.Generator:
    sequence = np.random.SeedSequence(
        entropy=int(master_seed), spawn_key=spawn_key(*keys)
    )
    return np.random.default_rng(sequence)
