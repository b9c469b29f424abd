# cython: language_level=3
"""Compiled training kernels: softmax cross-entropy and FedProx SGD.

These are the hot loops of the simulator (evaluated per client, per round,
per epoch, per batch).  The Python-visible functions mirror ``_pykernels``
exactly; loops run without the GIL so client training threads overlap.
"""

from libc.math cimport exp, log
from libc.stdlib cimport free, malloc

import numpy as np


cdef void _accumulate_batch(
    double[:, ::1] w, double[::1] b,
    double[:, ::1] x, long[::1] y, long[::1] perm,
    Py_ssize_t start, Py_ssize_t stop,
    double[:, ::1] gw, double[::1] gb, double* z,
) noexcept nogil:
    """Add (softmax - onehot) outer features over one batch into gw/gb."""
    cdef Py_ssize_t n_classes = w.shape[0]
    cdef Py_ssize_t n_features = w.shape[1]
    cdef Py_ssize_t i, c, j, row
    cdef double acc, zmax, total, coef
    for i in range(start, stop):
        row = perm[i]
        zmax = -1e308
        for c in range(n_classes):
            acc = b[c]
            for j in range(n_features):
                acc += w[c, j] * x[row, j]
            z[c] = acc
            if acc > zmax:
                zmax = acc
        total = 0.0
        for c in range(n_classes):
            z[c] = exp(z[c] - zmax)
            total += z[c]
        for c in range(n_classes):
            coef = z[c] / total
            if c == y[row]:
                coef -= 1.0
            gb[c] += coef
            for j in range(n_features):
                gw[c, j] += coef * x[row, j]


def ce_loss(double[:, ::1] weights, double[::1] bias,
            double[:, ::1] features, long[::1] labels):
    """Mean softmax cross-entropy of the linear model on the given samples."""
    cdef Py_ssize_t n = features.shape[0]
    cdef Py_ssize_t n_classes = weights.shape[0]
    cdef Py_ssize_t n_features = weights.shape[1]
    cdef Py_ssize_t i, c, j
    cdef double acc, zmax, total, true_logit, loss = 0.0
    cdef double* z = <double*> malloc(n_classes * sizeof(double))
    if z == NULL:
        raise MemoryError()
    try:
        with nogil:
            for i in range(n):
                zmax = -1e308
                for c in range(n_classes):
                    acc = bias[c]
                    for j in range(n_features):
                        acc += weights[c, j] * features[i, j]
                    z[c] = acc
                    if acc > zmax:
                        zmax = acc
                total = 0.0
                for c in range(n_classes):
                    total += exp(z[c] - zmax)
                true_logit = z[labels[i]]
                loss += log(total) + zmax - true_logit
        return loss / n
    finally:
        free(z)


def ce_grad(double[:, ::1] weights, double[::1] bias,
            double[:, ::1] features, long[::1] labels):
    """Analytic gradient of ``ce_loss``: (softmax - onehot) times features."""
    cdef Py_ssize_t n = features.shape[0]
    cdef Py_ssize_t n_classes = weights.shape[0]
    cdef Py_ssize_t n_features = weights.shape[1]
    gw_arr = np.zeros((n_classes, n_features), dtype=np.float64)
    gb_arr = np.zeros(n_classes, dtype=np.float64)
    perm_arr = np.arange(n, dtype=np.int64)
    cdef double[:, ::1] gw = gw_arr
    cdef double[::1] gb = gb_arr
    cdef long[::1] perm = perm_arr
    cdef Py_ssize_t c, j
    cdef double* z = <double*> malloc(n_classes * sizeof(double))
    if z == NULL:
        raise MemoryError()
    try:
        with nogil:
            _accumulate_batch(weights, bias, features, labels, perm, 0, n, gw, gb, z)
            for c in range(n_classes):
                gb[c] /= n
                for j in range(n_features):
                    gw[c, j] /= n
    finally:
        free(z)
    return gw_arr, gb_arr


def fedprox_sgd(double[:, ::1] weights, double[::1] bias,
                double[:, ::1] features, long[::1] labels,
                long[:, ::1] perms, Py_ssize_t batch_size,
                double lr, double mu):
    """Mini-batch SGD on cross-entropy plus (mu/2)||w - w_start||^2.

    ``perms`` holds one pre-shuffled index permutation per epoch; batches are
    consecutive chunks of each permutation.  Returns new arrays.
    """
    cdef Py_ssize_t n = features.shape[0]
    cdef Py_ssize_t n_classes = weights.shape[0]
    cdef Py_ssize_t n_features = weights.shape[1]
    cdef Py_ssize_t n_epochs = perms.shape[0]
    w_arr = np.asarray(weights).copy()
    b_arr = np.asarray(bias).copy()
    gw_arr = np.zeros((n_classes, n_features), dtype=np.float64)
    gb_arr = np.zeros(n_classes, dtype=np.float64)
    cdef double[:, ::1] w = w_arr
    cdef double[::1] b = b_arr
    cdef double[:, ::1] gw = gw_arr
    cdef double[::1] gb = gb_arr
    cdef Py_ssize_t e, start, stop, c, j
    cdef double nb, g
    cdef double* z = <double*> malloc(n_classes * sizeof(double))
    if z == NULL:
        raise MemoryError()
    try:
        with nogil:
            for e in range(n_epochs):
                start = 0
                while start < n:
                    stop = start + batch_size
                    if stop > n:
                        stop = n
                    nb = stop - start
                    for c in range(n_classes):
                        gb[c] = 0.0
                        for j in range(n_features):
                            gw[c, j] = 0.0
                    _accumulate_batch(w, b, features, labels, perms[e],
                                      start, stop, gw, gb, z)
                    for c in range(n_classes):
                        g = gb[c] / nb
                        if mu != 0.0:
                            g += mu * (b[c] - bias[c])
                        b[c] -= lr * g
                        for j in range(n_features):
                            g = gw[c, j] / nb
                            if mu != 0.0:
                                g += mu * (w[c, j] - weights[c, j])
                            w[c, j] -= lr * g
                    start = stop
    finally:
        free(z)
    return w_arr, b_arr
