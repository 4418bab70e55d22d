"""Pure-numpy twin of the compiled ``_core`` kernels.

Used when the extension is not built or ``MFKE_BACKEND=python`` is set.
Results agree with the compiled path to rounding (summation order differs).
"""
from __future__ import annotations

import numpy as np

GAUSSIAN = 0
EPANECHNIKOV = 1

_INV_SQRT_2PI = 0.3989422804014327
# elements per temporary (query x particle) block
_BLOCK = 1 << 21


def kde_1d(positions, weights, query, eps, family, deriv, nthreads=1):
    positions = np.asarray(positions, dtype=np.float64)
    weights = np.asarray(weights, dtype=np.float64)
    query = np.asarray(query, dtype=np.float64)
    n = positions.shape[0]
    inv_eps = 1.0 / eps
    if family == GAUSSIAN:
        scale = _INV_SQRT_2PI * inv_eps / n
    else:
        scale = 0.75 * inv_eps / n
    if deriv:
        scale = scale * inv_eps

    out = np.empty(query.shape[0])
    rows = max(1, _BLOCK // max(n, 1))
    for start in range(0, query.shape[0], rows):
        stop = min(start + rows, query.shape[0])
        z = (query[start:stop, None] - positions[None, :]) * inv_eps
        if family == GAUSSIAN:
            k = np.exp(-0.5 * z * z)
            if deriv:
                k = -z * k
        else:
            inside = np.abs(z) < 1.0
            k = np.where(inside, -2.0 * z if deriv else 1.0 - z * z, 0.0)
        out[start:stop] = scale * (k * weights).sum(axis=1)
    return out
