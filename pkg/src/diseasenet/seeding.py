"""Reproducible seed derivation.

Seeds are folded through the SplitMix64 finalizer so that every
(master seed, run, column, ...) tuple maps to an independent 64-bit stream
seed regardless of execution order or worker count.
"""

from __future__ import annotations

import zlib

_MASK = (1 << 64) - 1


def splitmix64(value: int) -> int:
    z = (value + 0x9E3779B97F4A7C15) & _MASK
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK
    return z ^ (z >> 31)


def derive_seed(master: int, *keys: int | str) -> int:
    """Mix `master` with each key in turn; string keys go through CRC-32."""
    state = splitmix64(int(master) & _MASK)
    for key in keys:
        if isinstance(key, str):
            key = zlib.crc32(key.encode("utf-8"))
        state = splitmix64(state ^ (int(key) & _MASK))
    return state


def run_seed(master: int, run_index: int) -> int:
    return derive_seed(master, "run", run_index)
