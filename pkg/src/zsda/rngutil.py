"""Deterministic RNG streams keyed by arbitrary hashable labels."""

import hashlib

import numpy as np


def seed_material(*keys):
    """Stable 4x64-bit entropy derived from repr() of the keys."""
    digest = hashlib.sha256(repr(keys).encode()).digest()
    return [int.from_bytes(digest[i:i + 8], "little") for i in range(0, 32, 8)]


def make_rng(*keys):
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed_material(*keys))))


def rng_state(rng):
    return rng.bit_generator.state


def set_rng_state(rng, state):
    rng.bit_generator.state = state
