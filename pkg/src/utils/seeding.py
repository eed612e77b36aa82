"""
Seed derivation for reproducible random streams.

Every consumer asks for a generator keyed by a base seed plus string tags
(e.g. ``derive_rng(seed, "dgp", "L")``). Tags are folded in with CRC32 so the
mapping is stable across interpreter runs and platforms.
"""

import zlib
from typing import Union

import numpy as np

Tag = Union[str, int]


def _tag_key(tag: Tag) -> int:
    if isinstance(tag, (int, np.integer)):
        return int(tag) & 0xFFFFFFFF
    return zlib.crc32(str(tag).encode("utf-8"))


def derive_seed_sequence(seed: int, *tags: Tag) -> np.random.SeedSequence:
    """Build the SeedSequence for ``seed`` and a tag path."""
    entropy = int(seed) & 0xFFFFFFFFFFFFFFFF
    return np.random.SeedSequence(entropy=entropy, spawn_key=tuple(_tag_key(t) for t in tags))


def derive_rng(seed: int, *tags: Tag) -> np.random.Generator:
    """Counter-based (Philox) generator for one named stream."""
    return np.random.Generator(np.random.Philox(derive_seed_sequence(seed, *tags)))


def derive_seed(seed: int, *tags: Tag) -> int:
    """Derive a 64-bit integer seed for a sub-stage."""
    state = derive_seed_sequence(seed, *tags).generate_state(2, dtype=np.uint32)
    return int(state[0]) << 32 | int(state[1])
