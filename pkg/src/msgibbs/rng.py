"""Derived random streams.

Every random draw comes from a counter-based Philox generator keyed by a
64-bit master seed and a tuple of small integers (e.g. ``(level, node, purpose)``).
Streams with different keys are independent, so a stage's draws do not depend
on how much randomness other stages consumed.
"""

from __future__ import annotations

import numpy as np

SEED_MASK = (1 << 64) - 1


def check_seed(seed) -> int:
    seed = int(seed)
    if not 0 <= seed <= SEED_MASK:
        raise ValueError(f"seed must be an unsigned 64-bit integer, got {seed}")
    return seed


def stream(seed: int, *key: int) -> np.random.Generator:
    ss = np.random.SeedSequence(check_seed(seed), spawn_key=tuple(int(k) for k in key))
    return np.random.Generator(np.random.Philox(ss))


def derive_seed(seed: int, *key: int) -> int:
    """A child 64-bit seed, for handing whole sub-experiments their own master seed."""
    ss = np.random.SeedSequence(check_seed(seed), spawn_key=tuple(int(k) for k in key))
    return int(ss.generate_state(1, dtype=np.uint64)[0])


def as_generator(seed_or_rng) -> np.random.Generator:
    if isinstance(seed_or_rng, np.random.Generator):
        return seed_or_rng
    return stream(seed_or_rng)
