"""Stable per-purpose random streams.

Every random draw in an experiment comes from a generator keyed by
``(seed, purpose, *indices)``. Schemes that share a seed therefore see the
same channels, partitions, offsets, mini-batches and noise samples, and adding
a scheme never shifts another scheme's randomness.
"""

import zlib

import numpy as np


def _key(part):
    if isinstance(part, str):
        return zlib.crc32(part.encode("utf-8"))
    part = int(part)
    if part < 0:
        raise ValueError("stream keys must be non-negative")
    return part


class SeedStreams:
    def __init__(self, seed):
        self.seed = int(seed)

    def rng(self, *keys):
        return np.random.default_rng([self.seed, *(_key(k) for k in keys)])

    def __repr__(self):
        return f"SeedStreams({self.seed})"
