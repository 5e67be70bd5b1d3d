import zlib

import numpy as np


def _key(part):
    if isinstance(part, str):
        return zlib.crc32(part.encode("utf-8"))
    return int(part) & 0xFFFFFFFFFFFFFFFF


def seed_sequence(seed, *keys):
    """SeedSequence keyed by (seed, *keys); strings map to stable CRC32 words."""
    return np.random.SeedSequence([_key(seed), *(_key(k) for k in keys)])


def derive_rng(seed, *keys):
    """
    Independent Generator for one (seed, repetition, purpose, ...) key.
    Repetitions run in any order or thread and still draw the same numbers.
    """
    return np.random.default_rng(seed_sequence(seed, *keys))


def derive_seed(seed, *keys):
    """A 32-bit integer seed for libraries that want an int (sklearn, networkx)."""
    return int(seed_sequence(seed, *keys).generate_state(1, dtype=np.uint32)[0])
