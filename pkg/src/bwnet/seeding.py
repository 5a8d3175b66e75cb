"""Deterministic sub-seed derivation.

All randomness in a run flows from one root seed; each component (data
generation, weight init, batch shuffling, stochastic binarization) draws
from its own named stream so components can be varied independently.
"""

import numpy as np

_STREAMS = {
    "data": 101,
    "init": 211,
    "shuffle": 331,
    "stochastic": 401,
}


def derive_seed(seed: int, stream: str, index: int = 0) -> int:
    """Stable 32-bit sub-seed for (root seed, named stream, index)."""
    if stream not in _STREAMS:
        raise KeyError(f"unknown seed stream '{stream}'")
    ss = np.random.SeedSequence([int(seed), _STREAMS[stream], int(index)])
    return int(ss.generate_state(1)[0])


def stream_rng(seed: int, stream: str, index: int = 0) -> np.random.Generator:
    return np.random.default_rng(derive_seed(seed, stream, index))
