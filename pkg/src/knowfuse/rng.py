"""Seeded random-stream management.

Every stochastic choice in the pipeline draws from a named substream derived
from one root seed, so runs are reproducible and checkpoint resume can restore
each stream's exact state.
"""

from __future__ import annotations

import zlib

import numpy as np


def substream(root_seed: int, name: str) -> np.random.Generator:
    """Independent generator for (root_seed, name); stable across processes."""
    key = zlib.crc32(name.encode("utf-8"))
    return np.random.default_rng(np.random.SeedSequence(root_seed, spawn_key=(key,)))


def get_state(gen: np.random.Generator) -> dict:
    return gen.bit_generator.state


def set_state(gen: np.random.Generator, state: dict) -> None:
    gen.bit_generator.state = state
