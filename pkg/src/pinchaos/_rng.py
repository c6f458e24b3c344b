"""Deterministic random streams keyed by integers.

Every stochastic routine receives an explicit ``numpy.random.Generator``.
Replicated experiments derive one generator per replicate from
``(seed, *keys)`` so that results do not depend on chunking or ordering.
"""

import zlib

import numpy as np


def _key(k):
    if isinstance(k, str):
        return zlib.crc32(k.encode())
    return int(k)


def stream(seed, *keys):
    """Return a generator for the stream identified by ``seed`` and ``keys``."""
    entropy = [int(seed) & 0xFFFFFFFFFFFFFFFF] + [_key(k) for k in keys]
    return np.random.default_rng(np.random.SeedSequence(entropy))


def as_generator(rng):
    if isinstance(rng, np.random.Generator):
        return rng
    return np.random.default_rng(rng)
