"""Seeded randomness.

Every random stream in imanip is a ``numpy.random.Generator`` over PCG64,
seeded through a splitmix64 mix of the run seed and a list of string tags.
Both algorithms are fixed, so identical (seed, tags) give identical streams
on every platform.
"""
import zlib

import numpy as np

_MASK = 0xFFFFFFFFFFFFFFFF


def splitmix64(state: int) -> int:
    """One splitmix64 output for the given 64-bit state."""
    z = (state + 0x9E3779B97F4A7C15) & _MASK
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK
    return z ^ (z >> 31)


def derive_seed(seed: int, *tags) -> int:
    state = splitmix64(int(seed) & _MASK)
    for tag in tags:
        if isinstance(tag, int):
            material = tag & _MASK
        else:
            material = zlib.crc32(str(tag).encode("utf-8"))
        state = splitmix64(state ^ material)
    return state


def make_rng(seed: int, *tags) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(derive_seed(seed, *tags)))
