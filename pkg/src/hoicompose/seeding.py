"""Deterministic named RNG streams derived from a single master seed.

Each consumer asks for a stream by name, so adding a new consumer never
shifts the draws of existing ones. Per-instance streams additionally fold
in the instance index, making generation order-independent.
"""
from __future__ import annotations

import hashlib

import numpy as np


def _name_key(name: str) -> int:
    """Stable 64-bit key for a stream name."""
    digest = hashlib.sha256(name.encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "little")


def substream(master_seed: int, name: str) -> np.random.Generator:
    """Generator for the named stream under this master seed."""
    seq = np.random.SeedSequence([int(master_seed), _name_key(name)])
    return np.random.default_rng(seq)


def per_instance_rng(master_seed: int, name: str, index: int) -> np.random.Generator:
    """Generator for one instance within a named stream."""
    if index < 0:
        raise ValueError("instance index must be nonnegative")
    seq = np.random.SeedSequence([int(master_seed), _name_key(name), int(index)])
    return np.random.default_rng(seq)


def stream_seed(master_seed: int, name: str) -> int:
    """A plain integer seed derived from the named stream (for APIs that want one)."""
    seq = np.random.SeedSequence([int(master_seed), _name_key(name)])
    return int(seq.generate_state(1, dtype=np.uint64)[0])
