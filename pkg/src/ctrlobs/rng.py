"""Deterministic random streams derived from one 64-bit root seed.

Every random quantity in the package is drawn from a stream obtained by
hashing ``(root_seed, label, index)``:

    key = SHA-256( seed as 8 little-endian bytes || b"/" || label utf-8
                   || b"/" || index as 8 little-endian bytes )

and the first 8 bytes of the digest, read little-endian, key a Philox
counter-based generator.  Philox output for a fixed key is identical on
every platform and word size, so seeds published in reports reproduce
bit-identical data anywhere.
"""
from __future__ import annotations

import hashlib

import numpy as np

__all__ = ["derive_key", "stream", "MASK64"]

MASK64 = (1 << 64) - 1


def derive_key(seed: int, label: str, index: int = 0) -> int:
    """Hash (seed, label, index) to a 64-bit stream key."""
    seed = int(seed) & MASK64
    index = int(index) & MASK64
    h = hashlib.sha256()
    h.update(seed.to_bytes(8, "little"))
    h.update(b"/")
    h.update(label.encode("utf-8"))
    h.update(b"/")
    h.update(index.to_bytes(8, "little"))
    return int.from_bytes(h.digest()[:8], "little")


def stream(seed: int, label: str, index: int = 0) -> np.random.Generator:
    """Independent generator for one (seed, label, index) triple."""
    return np.random.Generator(np.random.Philox(key=derive_key(seed, label, index)))
