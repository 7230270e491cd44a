"""Seed derivation and counter-based random streams.

Every random draw in the toolkit comes from a Philox-4x64 generator keyed by a
64-bit seed. Child streams are derived by hashing the parent seed together with
a path of identifiers (``child_seed(master, scheme_id, snr_mb, index)``), using
BLAKE2b with an 8-byte digest read as a little-endian unsigned integer. The
derivation depends only on its inputs, so any entry of a dataset can be
regenerated in isolation and in any order.
"""

from __future__ import annotations

import hashlib
import struct

import numpy as np

MASK64 = (1 << 64) - 1


def _encode(part: int | str | float) -> bytes:
    if isinstance(part, bool):
        part = int(part)
    if isinstance(part, int):
        return b"i" + struct.pack("<Q", part & MASK64)
    if isinstance(part, float):
        return b"f" + struct.pack("<d", part)
    if isinstance(part, str):
        raw = part.encode("utf-8")
        return b"s" + struct.pack("<I", len(raw)) + raw
    raise TypeError(f"cannot derive a seed from {type(part).__name__}")


def child_seed(seed: int, *path: int | str | float) -> int:
    """Derive a 64-bit child seed from ``seed`` and an identifier path."""
    h = hashlib.blake2b(digest_size=8, person=b"amcvit-seed")
    h.update(_encode(int(seed)))
    for part in path:
        h.update(_encode(part))
    return int.from_bytes(h.digest(), "little")


def make_rng(seed: int) -> np.random.Generator:
    """Philox generator keyed by a 64-bit seed."""
    return np.random.Generator(np.random.Philox(key=int(seed) & MASK64))
