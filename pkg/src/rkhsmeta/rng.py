"""Counter-based random streams.

Every random draw in an experiment comes from a Philox generator keyed by a
tuple of integers such as ``(run_seed, iteration, task_index)``.  The stream
for a key never depends on what was drawn before, so serial and parallel
execution see identical numbers.
"""

from __future__ import annotations

import numpy as np


def key_rng(*key: int) -> np.random.Generator:
    words = np.random.SeedSequence([int(k) for k in key]).generate_state(2, dtype=np.uint64)
    return np.random.Generator(np.random.Philox(key=words))


def as_rng(seed) -> np.random.Generator:
    """Accept an int, a tuple key, or an existing generator."""
    if isinstance(seed, np.random.Generator):
        return seed
    if isinstance(seed, (tuple, list)):
        return key_rng(*seed)
    return key_rng(int(seed))
