"""Named random streams derived from one root seed.

Each run owns a single 64-bit root seed; every randomized component
(synthesis, splitting, weight init, batch sampling) draws from its own
derived stream so varying one component never perturbs the others.
"""

from __future__ import annotations

import numpy as np

# Stream indices are part of the on-disk reproducibility contract; never
# renumber existing entries.
_STREAMS = {
    "synthesis": 0,
    "split": 1,
    "init": 2,
    "batch": 3,
}


def derive_seed(root_seed: int, stream: str) -> int:
    """Return the deterministic child seed for a named stream."""
    if stream not in _STREAMS:
        raise KeyError(f"unknown seed stream {stream!r}; known: {sorted(_STREAMS)}")
    seq = np.random.SeedSequence([int(root_seed), _STREAMS[stream]])
    return int(seq.generate_state(1, np.uint64)[0])


def stream_rng(root_seed: int, stream: str) -> np.random.Generator:
    """Generator seeded from the named child stream of ``root_seed``."""
    return np.random.Generator(np.random.PCG64(derive_seed(root_seed, stream)))


def rng_from_seed(seed: int) -> np.random.Generator:
    """Generator seeded directly (for components that receive a final seed)."""
    return np.random.Generator(np.random.PCG64(int(seed)))
