"""Deterministic, splittable random streams.

Every random draw in the toolkit (weight init, dropout masks, shuffles,
augmentation parameters) comes from a generator derived here from the single
run seed plus a tuple of context keys, e.g. ``derive_rng(seed, "dropout",
epoch, batch_start, layer_index)``.  Identical keys give identical streams,
so results do not depend on evaluation order or worker count.
"""

from __future__ import annotations

import hashlib

import numpy as np


def _key_to_int(key: int | str) -> int:
    if isinstance(key, (int, np.integer)):
        return int(key) & 0xFFFFFFFFFFFFFFFF
    digest = hashlib.blake2s(str(key).encode("utf-8"), digest_size=8).digest()
    return int.from_bytes(digest, "little")


def derive_rng(seed: int, *context: int | str) -> np.random.Generator:
    """Return a Generator for the stream named by ``(seed, *context)``."""
    entropy = [_key_to_int(seed)] + [_key_to_int(k) for k in context]
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(entropy)))
