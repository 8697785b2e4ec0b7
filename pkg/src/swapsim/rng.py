"""Deterministic derivation of independent random streams from a master seed."""

from __future__ import annotations

import zlib

import numpy as np


def _key(part) -> int:
    if isinstance(part, (int, np.integer)):
        return int(part) & 0xFFFFFFFF
    return zlib.crc32(str(part).encode("utf-8"))


def derive_rng(master_seed: int, *keys) -> np.random.Generator:
    """Generator seeded by ``master_seed`` and a tuple of labels / indices.

    Labels are hashed with CRC-32 so the stream for ("S1", 7) is the same on
    every platform and every run.
    """
    seq = np.random.SeedSequence(int(master_seed), spawn_key=tuple(_key(k) for k in keys))
    return np.random.default_rng(seq)
