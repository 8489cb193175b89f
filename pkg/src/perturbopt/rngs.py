"""Labeled, counter-style RNG substreams.

Every random draw in the library comes from a generator derived from
(master_seed, label).  Labels are plain strings such as "instances",
"perturb/12", "ksos/sample" or "scenario/3".  Derivation goes through
SHA-256, so substreams are independent of each other, of platform, and of
the order or thread in which they are created.
"""

from __future__ import annotations

import hashlib

import numpy as np


def substream_seed(master_seed: int, label: str) -> np.random.SeedSequence:
    """Derive a SeedSequence for the given label, stable across runs."""
    digest = hashlib.sha256(f"{master_seed}:{label}".encode("utf-8")).digest()
    words = [int.from_bytes(digest[i : i + 4], "little") for i in range(0, 16, 4)]
    return np.random.SeedSequence(entropy=words)


def substream(master_seed: int, label: str) -> np.random.Generator:
    """A fresh Generator for (master_seed, label)."""
    return np.random.Generator(np.random.PCG64(substream_seed(master_seed, label)))


def spawn_seed(master_seed: int, label: str) -> int:
    """A derived integer seed, for APIs that take a scalar seed."""
    digest = hashlib.sha256(f"{master_seed}:{label}".encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "little")
