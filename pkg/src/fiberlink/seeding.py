"""Deterministic, labeled random streams.

All randomness in a scenario descends from one root seed. Subsystems obtain
independent generators via `stream(root_seed, label)`: the label is hashed
with SHA-256 into a spawn key, so streams are independent of each other and
of the order in which they are created. The derivation is stable across
processes and platforms.
"""

from __future__ import annotations

import hashlib

import numpy as np

__all__ = ["stream", "child_seed"]


def child_seed(root_seed: int, label: str) -> int:
    """64-bit child seed derived from the root seed and a stream label."""
    digest = hashlib.sha256(f"{root_seed}:{label}".encode()).digest()
    return int.from_bytes(digest[:8], "big")


def stream(root_seed: int, label: str) -> np.random.Generator:
    """Independent generator for one labeled subsystem of a scenario."""
    seq = np.random.SeedSequence(entropy=root_seed, spawn_key=(child_seed(root_seed, label),))
    return np.random.default_rng(seq)
