"""Seeded random-number streams.

One master seed spawns independent per-purpose generators so that, e.g.,
changing the exploration schedule never perturbs the channel realization
sequence. Streams are PCG64 generators derived via SeedSequence.spawn,
which guarantees independence between children.
"""

from __future__ import annotations

import numpy as np

STREAM_NAMES = ("channel", "exploration", "replay", "init", "eval")


def rng_streams(seed: int) -> dict[str, np.random.Generator]:
    """Independent named generators for one run, all derived from `seed`."""
    children = np.random.SeedSequence(seed).spawn(len(STREAM_NAMES))
    return {name: np.random.default_rng(ss) for name, ss in zip(STREAM_NAMES, children)}
