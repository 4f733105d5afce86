"""Named, order-independent random sub-streams derived from one root seed.

Every consumer asks for a stream by name (``stream(seed, "mobility", ue_id)``),
so adding a new consumer never perturbs the draws of an existing one.
"""

import zlib

import numpy as np

_MASK64 = (1 << 64) - 1


def _key(name):
    if isinstance(name, (int, np.integer)):
        return int(name) & _MASK64
    return zlib.crc32(str(name).encode("utf-8"))


def seed_sequence(seed, *names):
    return np.random.SeedSequence([int(seed) & _MASK64, *(_key(n) for n in names)])


def stream(seed, *names):
    """Return a fresh ``numpy.random.Generator`` for the sub-stream ``names``."""
    return np.random.default_rng(seed_sequence(seed, *names))


def derive_seed(seed, *names):
    """Return a 64-bit integer seed for the sub-stream ``names``."""
    return int(seed_sequence(seed, *names).generate_state(1, dtype=np.uint64)[0])
