"""Deterministic named random substreams derived from one pipeline seed."""

from __future__ import annotations

import numpy as np

# stable name -> spawn-key registry; append only, never renumber
_STREAMS = {
    "init": 0,
    "shuffle": 1,
    "synth": 2,
}


def substream(seed: int, name: str) -> np.random.Generator:
    """Generator for one named stream; same (seed, name) always replays."""
    if name not in _STREAMS:
        raise KeyError(f"unknown random substream {name!r}")
    ss = np.random.SeedSequence(entropy=int(seed), spawn_key=(_STREAMS[name],))
    return np.random.default_rng(ss)
