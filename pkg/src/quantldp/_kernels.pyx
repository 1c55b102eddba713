# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled hot loops: per-coordinate stochastic rounding and the O(t) online gradient."""

import numpy as np
cimport numpy as cnp
from libc.math cimport ceil, exp, log1p

cnp.import_array()


def quantize_into(const double[::1] y, double d, const double[::1] uniforms, double[::1] out):
    cdef Py_ssize_t k, n = y.shape[0]
    cdef double level, z
    for k in range(n):
        level = ceil(y[k] / d) - 1.0
        z = y[k] - level * d
        if z <= 0.0:
            level -= 1.0
            z += d
        elif z > d:
            level += 1.0
            z -= d
        if uniforms[k] < z / d:
            out[k] = (level + 1.0) * d
        else:
            out[k] = level * d


cdef inline double _neg_sigmoid_weight(double margin) nogil:
    # sigma(-margin) computed without overflow
    cdef double e
    if margin >= 0:
        e = exp(-margin)
        return e / (1.0 + e)
    return 1.0 / (1.0 + exp(margin))


def logistic_online_grad(const double[:, :, ::1] A, const double[:, ::1] b,
                         const double[::1] theta, Py_ssize_t rounds):
    """Average over rounds ``0..rounds-1`` of batch-averaged logistic gradients."""
    cdef Py_ssize_t k, s, j, batch = A.shape[1], dim = A.shape[2]
    cdef double margin, w
    out = np.zeros(dim)
    cdef double[::1] acc = out
    cdef double[::1] g = np.empty(dim)
    with nogil:
        for k in range(rounds):
            for j in range(dim):
                g[j] = 0.0
            for s in range(batch):
                margin = 0.0
                for j in range(dim):
                    margin += A[k, s, j] * theta[j]
                margin *= b[k, s]
                w = -b[k, s] * _neg_sigmoid_weight(margin)
                for j in range(dim):
                    g[j] += w * A[k, s, j]
            for j in range(dim):
                acc[j] += g[j] / batch
        for j in range(dim):
            acc[j] /= rounds
    return out


def quadratic_online_grad(const double[:, :, ::1] targets, const double[::1] theta,
                          Py_ssize_t rounds):
    cdef Py_ssize_t k, s, j, batch = targets.shape[1], dim = targets.shape[2]
    out = np.zeros(dim)
    cdef double[::1] acc = out
    cdef double[::1] g = np.empty(dim)
    with nogil:
        for k in range(rounds):
            for j in range(dim):
                g[j] = 0.0
            for s in range(batch):
                for j in range(dim):
                    g[j] += theta[j] - targets[k, s, j]
            for j in range(dim):
                acc[j] += g[j] / batch
        for j in range(dim):
            acc[j] /= rounds
    return out


def logistic_losses(const double[:, ::1] A, const double[::1] b, const double[::1] theta):
    """Per-point ``log(1 + exp(-b a^T theta))``."""
    cdef Py_ssize_t n = A.shape[0], dim = A.shape[1], p, j
    cdef double margin
    out = np.empty(n)
    cdef double[::1] res = out
    with nogil:
        for p in range(n):
            margin = 0.0
            for j in range(dim):
                margin += A[p, j] * theta[j]
            margin *= -b[p]
            if margin > 0:
                res[p] = margin + log1p(exp(-margin))
            else:
                res[p] = log1p(exp(margin))
    return out
