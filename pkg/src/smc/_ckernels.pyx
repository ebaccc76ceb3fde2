# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled versions of the kernels in :mod:`smc._pykernels`.

Signatures and results match the numpy fallback to floating-point rounding.
"""
import numpy as np

from libc.math cimport exp, log, M_PI

cdef double HALF_LOG_2PI = 0.5 * log(2.0 * M_PI)


def kde_logpdf(const double[:, ::1] queries, const double[:, ::1] support,
               const double[::1] bandwidth):
    cdef Py_ssize_t m = queries.shape[0]
    cdef Py_ssize_t n = support.shape[0]
    cdef Py_ssize_t d = support.shape[1]
    cdef Py_ssize_t q, i, k
    cdef double norm = 0.0, best, acc, t, e
    cdef double[::1] inv_h = np.empty(d)
    cdef double[::1] expo = np.empty(n)
    out = np.empty(m)
    cdef double[::1] res = out

    for k in range(d):
        inv_h[k] = 1.0 / bandwidth[k]
        norm += log(bandwidth[k]) + HALF_LOG_2PI
    norm += log(<double>n)

    for q in range(m):
        best = -1e308
        for i in range(n):
            acc = 0.0
            for k in range(d):
                t = (queries[q, k] - support[i, k]) * inv_h[k]
                acc += t * t
            e = -0.5 * acc
            expo[i] = e
            if e > best:
                best = e
        acc = 0.0
        for i in range(n):
            acc += exp(expo[i] - best)
        res[q] = best + log(acc) - norm
    return out


def pair_loss(const double[:, ::1] z, const double[:, ::1] coef):
    cdef Py_ssize_t n = z.shape[0]
    cdef Py_ssize_t k = z.shape[1]
    cdef Py_ssize_t i, j, c
    cdef double value = 0.0, sq, diff, w
    grad_arr = np.zeros((n, k))
    cdef double[:, ::1] grad = grad_arr

    for i in range(n):
        for j in range(n):
            w = coef[i, j]
            if w == 0.0:
                continue
            sq = 0.0
            for c in range(k):
                diff = z[i, c] - z[j, c]
                sq += diff * diff
                grad[i, c] += 2.0 * w * diff
                grad[j, c] -= 2.0 * w * diff
            value += w * sq
    return value, grad_arr
