"""Reproducible random streams.

Every sampler in this package takes an explicit ``numpy.random.Generator``.
Streams are addressed by a ``(seed, stream)`` pair on top of the Philox
counter-based bit generator, so replicate k of an experiment can own stream k
without any coordination between workers.
"""

from __future__ import annotations

import numpy as np

_PHILOX_MOD = 2**64


def rng_stream(seed: int, stream: int = 0) -> np.random.Generator:
    """Return the generator addressed by ``(seed, stream)``.

    Identical arguments always yield an identical stream; distinct ``stream``
    values give statistically independent streams for the same seed.
    """
    if seed < 0 or stream < 0:
        raise ValueError("seed and stream must be nonnegative")
    key = np.array([seed % _PHILOX_MOD, stream % _PHILOX_MOD], dtype=np.uint64)
    return np.random.Generator(np.random.Philox(key=key))


def substream(seed: int, *indices: int) -> np.random.Generator:
    """Derive a stream from a seed and a small tuple of indices.

    Used for nested fan-out (e.g. per-(n, replicate) cells of a study) where a
    single stream id is not enough. Collision-free for indices below 2**16.
    """
    sid = 0
    for ix in indices:
        if ix < 0 or ix >= 2**16:
            raise ValueError("substream indices must be in [0, 65536)")
        sid = (sid << 16) | ix
    return rng_stream(seed, sid)
