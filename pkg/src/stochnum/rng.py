"""Counter-based normal draws keyed by (stream, path, channel).

Every channel process of every Monte Carlo path owns an independent Philox
stream. The draw used at grid step ``b`` is the ``b``-th normal of that
stream, so a sample depends only on its key and never on evaluation order.
Reusing a key across scenarios gives common random numbers.
"""

from __future__ import annotations

import numpy as np

_MASK32 = 0xFFFFFFFF


# second key word: channel id in the high bits, process component in the low two
LTF, STF_I, STF_Q = 0, 1, 2


def _key(stream: int, path: int, channel: int, component: int) -> list[int]:
    if not (0 <= stream <= _MASK32 and 0 <= path <= _MASK32):
        raise ValueError("stream and path ids must fit in 32 bits")
    if channel < 0:
        raise ValueError("channel id must be non-negative")
    return [(stream << 32) | path, (channel << 2) | component]


def normals(stream: int, path: int, channel: int, size: int,
            component: int = LTF) -> np.ndarray:
    """Standard normals for one (stream, path, channel, component) key."""
    key = _key(stream, path, channel, component)
    gen = np.random.Generator(np.random.Philox(key=key))
    return gen.standard_normal(size)


def normal_block(stream: int, paths, channels, size: int,
                 component: int = LTF) -> np.ndarray:
    """Normals of shape (len(paths), len(channels), size)."""
    paths = list(paths)
    channels = list(channels)
    out = np.empty((len(paths), len(channels), size))
    for p_idx, path in enumerate(paths):
        for c_idx, channel in enumerate(channels):
            out[p_idx, c_idx] = normals(stream, path, channel, size, component)
    return out
