"""Deterministic seed derivation.

A single master seed fans out into independent per-stage seeds via a
splitmix64 chain over the stage label, so adding or reordering stages
never perturbs the streams of unrelated stages, and annotating a node
is reproducible regardless of how the batch was split.
"""

from __future__ import annotations

import numpy as np

_MASK = (1 << 64) - 1


def splitmix64(x: int) -> int:
    """One step of the splitmix64 output function."""
    x = (x + 0x9E3779B97F4A7C15) & _MASK
    z = x
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK
    return (z ^ (z >> 31)) & _MASK


def derive_seed(master: int, *labels: object) -> int:
    """Derive a 64-bit sub-seed from a master seed and a label path.

    Labels may be strings or integers; they are folded into the state
    byte by byte so distinct paths give independent-looking seeds.
    """
    state = splitmix64(master & _MASK)
    for label in labels:
        for byte in str(label).encode("utf-8"):
            state = splitmix64(state ^ byte)
        state = splitmix64(state ^ 0xFF)  # separator: ("ab","c") != ("a","bc")
    return state


def rng_for(master: int, *labels: object) -> np.random.Generator:
    """A numpy Generator seeded from the derived sub-seed."""
    return np.random.default_rng(derive_seed(master, *labels))
