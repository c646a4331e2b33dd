"""Labeled random streams derived from a master seed.

``stream(seed, "forest", 3)`` always yields the same generator, independent of
which other streams were drawn before it, so work can be reordered or run in
parallel without changing results.
"""
from __future__ import annotations

import hashlib

import numpy as np


def _label_word(label):
    if isinstance(label, (int, np.integer)) and not isinstance(label, bool) and label >= 0:
        return int(label)
    digest = hashlib.sha256(repr(label).encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "little")


def seed_sequence(seed, *labels):
    return np.random.SeedSequence(entropy=int(seed), spawn_key=tuple(_label_word(x) for x in labels))


def stream(seed, *labels) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(seed_sequence(seed, *labels)))


def child_seed(seed, *labels):
    """A 63-bit integer seed for a labeled sub-task."""
    return int(seed_sequence(seed, *labels).generate_state(1, dtype=np.uint64)[0] >> np.uint64(1))
