# Compiled kernels for direct (exact) kernel density sums in one dimension.
#
# Each query point is reduced sequentially over the particles in their stored
# order, so the result does not depend on the number of OpenMP threads.

import numpy as np

from cython.parallel import prange
from libc.math cimport exp, fabs, sqrt

cdef double INV_SQRT_2PI = 0.3989422804014327

# family codes shared with the pure-Python fallback
GAUSSIAN = 0
EPANECHNIKOV = 1


cdef double _gauss_sum(const double[::1] pos, const double[::1] w, double x,
                       double inv_eps, int deriv) noexcept nogil:
    cdef Py_ssize_t j
    cdef Py_ssize_t n = pos.shape[0]
    cdef double z, acc = 0.0
    if deriv == 0:
        for j in range(n):
            z = (x - pos[j]) * inv_eps
            acc = acc + w[j] * exp(-0.5 * z * z)
    else:
        for j in range(n):
            z = (x - pos[j]) * inv_eps
            acc = acc - w[j] * z * exp(-0.5 * z * z)
    return acc


cdef double _epan_sum(const double[::1] pos, const double[::1] w, double x,
                      double inv_eps, int deriv) noexcept nogil:
    cdef Py_ssize_t j
    cdef Py_ssize_t n = pos.shape[0]
    cdef double z, acc = 0.0
    if deriv == 0:
        for j in range(n):
            z = (x - pos[j]) * inv_eps
            if fabs(z) < 1.0:
                acc = acc + w[j] * (1.0 - z * z)
    else:
        for j in range(n):
            z = (x - pos[j]) * inv_eps
            if fabs(z) < 1.0:
                acc = acc - w[j] * 2.0 * z
    return acc


def kde_1d(const double[::1] positions, const double[::1] weights,
           const double[::1] query, double eps, int family, int deriv,
           int nthreads=1):
    """Weighted kernel sum ``(1/N) sum_j w_j K_eps^(deriv)(x_q - xi_j)``."""
    cdef Py_ssize_t n = positions.shape[0]
    cdef Py_ssize_t m = query.shape[0]
    cdef Py_ssize_t q
    cdef double inv_eps = 1.0 / eps
    cdef double scale
    out = np.empty(m, dtype=np.float64)
    cdef double[::1] res = out

    if family == 0:
        scale = INV_SQRT_2PI * inv_eps / n
    else:
        scale = 0.75 * inv_eps / n
    if deriv:
        scale = scale * inv_eps

    if nthreads < 1:
        nthreads = 1
    if family == 0:
        for q in prange(m, nogil=True, num_threads=nthreads, schedule="static"):
            res[q] = scale * _gauss_sum(positions, weights, query[q], inv_eps, deriv)
    else:
        for q in prange(m, nogil=True, num_threads=nthreads, schedule="static"):
            res[q] = scale * _epan_sum(positions, weights, query[q], inv_eps, deriv)
    return out
