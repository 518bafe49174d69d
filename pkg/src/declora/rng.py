"""Deterministic, splittable random streams.

Every random draw in the simulator comes from a stream keyed by
``(seed, role, *indices)``.  Keys are turned into a ``SeedSequence`` spawn
key, so two streams with different keys are statistically independent and a
given key always produces the same numbers, regardless of what other streams
were consumed before it.  The underlying bit generator is Philox, a
counter-based generator.
"""
from __future__ import annotations

import numpy as np

# role identifiers; part of the stream key, never change their values
ROLE_DATA = 1
ROLE_TOPOLOGY = 2
ROLE_INIT = 3
ROLE_BATCH = 4
ROLE_PARTITION = 5
ROLE_SELECT = 6
ROLE_BASE = 7

ROLES = {
    "data": ROLE_DATA,
    "topology": ROLE_TOPOLOGY,
    "init": ROLE_INIT,
    "batch": ROLE_BATCH,
    "partition": ROLE_PARTITION,
    "select": ROLE_SELECT,
    "base": ROLE_BASE,
}


def stream(seed: int, role: str | int, *indices: int) -> np.random.Generator:
    """Return the generator for ``(seed, role, *indices)``.

    >>> a = stream(0, "batch", 3, 1, 0).normal()
    >>> b = stream(0, "batch", 3, 1, 0).normal()
    >>> a == b
    True
    """
    role_id = ROLES[role] if isinstance(role, str) else int(role)
    if seed < 0 or any(i < 0 for i in indices):
        raise ValueError("seed and stream indices must be non-negative")
    ss = np.random.SeedSequence(entropy=int(seed), spawn_key=(role_id, *map(int, indices)))
    return np.random.Generator(np.random.Philox(ss))
