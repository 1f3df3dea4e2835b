"""Splittable seeded randomness.

Every random draw in the package is addressed by a top-level integer seed
plus a *path* of labels, e.g. ``stream(7, "fig1", "haar", 3, "signs")``.
Paths map to :class:`numpy.random.SeedSequence` spawn keys, so distinct
paths give statistically independent streams and a given path always
reproduces the same numbers.
"""

import hashlib

import numpy as np


def _key(part):
    if isinstance(part, (bool, np.bool_)):
        part = int(part)
    if isinstance(part, (int, np.integer)):
        if part < 0:
            raise ValueError(f"negative path component {part}")
        return int(part)
    if isinstance(part, float):
        part = repr(part)
    digest = hashlib.blake2b(str(part).encode(), digest_size=8).digest()
    return int.from_bytes(digest, "little")


def seed_sequence(seed, *path):
    return np.random.SeedSequence(int(seed), spawn_key=tuple(_key(p) for p in path))


def stream(seed, *path):
    """Generator for the component ``path`` under ``seed``."""
    return np.random.default_rng(seed_sequence(seed, *path))


def derive_seed(seed, *path):
    """A 63-bit integer seed for the component ``path`` under ``seed``."""
    state = seed_sequence(seed, *path).generate_state(1, dtype=np.uint64)[0]
    return int(state >> np.uint64(1))
