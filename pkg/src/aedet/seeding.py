"""Deterministic derivation of per-component seeds from one root seed."""

import zlib

import numpy as np


def derive_seed(root, *path):
    """Return a 32-bit seed derived from `root` and a path of names/ints.

    The same (root, path) always yields the same seed; distinct paths give
    statistically independent streams.
    """
    key = []
    for part in path:
        if isinstance(part, str):
            key.append(zlib.crc32(part.encode("utf-8")))
        else:
            key.append(int(part))
    ss = np.random.SeedSequence(entropy=int(root), spawn_key=tuple(key))
    return int(ss.generate_state(1, dtype=np.uint32)[0])


def make_rng(root, *path):
    return np.random.default_rng(derive_seed(root, *path))
