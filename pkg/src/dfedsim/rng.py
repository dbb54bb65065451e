"""Seed-stream discipline.

A single master seed fans out into independent streams keyed by
(purpose, client, round). Subsystems never share a stream, so changing
e.g. the topology seed usage cannot perturb minibatch draws.
"""

from __future__ import annotations

import zlib

import numpy as np


def _key_to_ints(key) -> list[int]:
    if isinstance(key, str):
        return [zlib.crc32(key.encode("utf-8"))]
    if isinstance(key, (int, np.integer)):
        return [int(key) & 0xFFFFFFFFFFFFFFFF]
    if isinstance(key, (tuple, list)):
        out: list[int] = []
        for k in key:
            out.extend(_key_to_ints(k))
        return out
    raise TypeError(f"unsupported seed key: {key!r}")


def seed_sequence(*keys) -> np.random.SeedSequence:
    """Build a SeedSequence from a mixed tuple of ints and strings."""
    return np.random.SeedSequence(_key_to_ints(keys))


def stream(*keys) -> np.random.Generator:
    """Independent generator for the given key tuple."""
    return np.random.default_rng(seed_sequence(*keys))


def derive_seed(*keys) -> int:
    """Stable 64-bit integer seed derived from the key tuple."""
    return int(seed_sequence(*keys).generate_state(1, np.uint64)[0])
