"""Counter-based random streams.

Every draw is a pure function of ``(seed, tag, step, sub)`` and the index of
the consumer inside the batch, so a particle's noise never depends on how
many other particles were simulated before it or on the thread layout.
Philox-4x64 from numpy supplies the keyed counter mode.
"""
from __future__ import annotations

import numpy as np

# stream tags
INIT = 1
DIFFUSION = 2
JUMP_DECISION = 3
JUMP_TARGET = 4
ENVIRONMENT = 5

_MASK64 = (1 << 64) - 1
_TWO_POW_M53 = 2.0**-53


def _raw(seed: int, tag: int, step: int, sub: int, count: int) -> np.ndarray:
    key = np.array([seed & _MASK64, tag], dtype=np.uint64)
    counter = np.array([0, step & _MASK64, sub & _MASK64, 0], dtype=np.uint64)
    return np.random.Philox(key=key, counter=counter).random_raw(count)


def uniforms(seed: int, tag: int, step: int, n: int, sub: int = 0) -> np.ndarray:
    """``n`` uniforms on the open interval (0, 1)."""
    raw = _raw(seed, tag, step, sub, n)
    return ((raw >> np.uint64(11)).astype(np.float64) + 0.5) * _TWO_POW_M53


def normals(seed: int, tag: int, step: int, n: int, sub: int = 0) -> np.ndarray:
    """``n`` standard normals; entry ``i`` uses raw words ``2i`` and ``2i+1``."""
    u = uniforms(seed, tag, step, 2 * n, sub)
    return np.sqrt(-2.0 * np.log(u[0::2])) * np.cos(2.0 * np.pi * u[1::2])
