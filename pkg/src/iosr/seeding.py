"""Deterministic seed derivation for nested experiment stages."""

import numpy as np


def derive_seed(base_seed: int, *path: int) -> int:
    """Derive a child seed from a base seed and an integer key path.

    Same (base_seed, path) always yields the same child; distinct paths
    yield statistically independent streams.
    """
    ss = np.random.SeedSequence(entropy=int(base_seed) & (2**64 - 1), spawn_key=tuple(path))
    hi, lo = ss.generate_state(2, dtype=np.uint64)
    return int(hi ^ (lo >> 1))
