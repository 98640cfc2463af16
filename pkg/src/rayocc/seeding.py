"""Named random sub-streams derived from one integer seed.

``stream(seed, "train")`` is independent of ``stream(seed, "init")`` so
components can be re-run in isolation and still draw the same numbers.
"""

from __future__ import annotations

import numpy as np

STREAMS = {"scene": 1, "view": 2, "init": 3, "train": 4, "eval": 5, "bench": 6, "stats": 7}


def stream(seed: int, name: str, *extra: int) -> np.random.Generator:
    if name not in STREAMS:
        raise KeyError(f"unknown random stream {name!r}; known: {sorted(STREAMS)}")
    return np.random.default_rng([int(seed), STREAMS[name], *(int(e) for e in extra)])
