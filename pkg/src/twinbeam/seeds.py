"""Seed handling.

Every random stream is derived from one master seed by
``SeedSequence(master, spawn_key=(stream_id, index))``. Stream ids are fixed
small integers (see ``STREAMS``), so a repetition's draws do not depend on how
many other repetitions ran or in which order.
"""

import numpy as np

STREAMS = {
    "pulses": 1,
    "electronic": 2,
    "calibration": 3,
    "dark": 4,
    "snl_traces": 5,
    "freq_pulses": 6,
    "freq_electronic": 7,
    "freq_snl": 8,
    "freq_dark": 9,
}


def derive_seed(master: int, stream: str, *index: int) -> np.random.SeedSequence:
    return np.random.SeedSequence(int(master), spawn_key=(STREAMS[stream], *index))


def make_rng(seed) -> np.random.Generator:
    if isinstance(seed, np.random.Generator):
        return seed
    return np.random.default_rng(seed)
