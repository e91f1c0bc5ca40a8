"""Named, reproducible random substreams derived from one master seed."""
from __future__ import annotations

import zlib

import numpy as np


def _key(part) -> int:
    if isinstance(part, (int, np.integer)):
        return int(part)
    return zlib.crc32(str(part).encode("utf-8"))


def substream(seed: int, *names) -> np.random.Generator:
    """Return a generator for the substream ``names`` of ``seed``.

    Distinct name paths give statistically independent streams, and the
    mapping from (seed, names) to stream is stable across runs and platforms.
    """
    ss = np.random.SeedSequence(entropy=int(seed), spawn_key=tuple(_key(p) for p in names))
    return np.random.default_rng(ss)


def as_generator(rng) -> np.random.Generator:
    """Accept a Generator or an integer seed."""
    if isinstance(rng, np.random.Generator):
        return rng
    return np.random.default_rng(rng)
