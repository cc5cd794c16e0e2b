# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled twins of the kernels in :mod:`insitu_ar._pykernels`."""
import numpy as np
cimport numpy as cnp

cnp.import_array()


def batch_gradient(const double[::1] coeffs, const double[:, :] X,
                   const double[::1] y, double scale):
    cdef Py_ssize_t m = X.shape[0], n = X.shape[1], i, j
    cdef double inv = 1.0 / scale, r, loss = 0.0
    grad_arr = np.zeros(n + 1)
    cdef double[::1] grad = grad_arr
    cdef double theta0 = coeffs[0] * inv
    for i in range(m):
        r = 0.0
        for j in range(n):
            r += coeffs[j + 1] * X[i, j]
        r = theta0 + (r - y[i]) * inv
        loss += r * r
        grad[0] += r
        for j in range(n):
            grad[j + 1] += r * X[i, j] * inv
    for j in range(n + 1):
        grad[j] /= m
    return loss / m, grad_arr


def gd_step(const double[::1] coeffs, const double[:, :] X,
            const double[::1] y, double lr, double scale):
    cdef Py_ssize_t n = coeffs.shape[0], j
    loss, grad_arr = batch_gradient(coeffs, X, y, scale)
    cdef double[::1] grad = grad_arr
    out_arr = np.empty(n)
    cdef double[::1] out = out_arr
    out[0] = (coeffs[0] / scale - lr * grad[0]) * scale
    for j in range(1, n):
        out[j] = coeffs[j] - lr * grad[j]
    return out_arr, loss


def predict_many(const double[::1] coeffs, const double[:, :] X):
    cdef Py_ssize_t m = X.shape[0], n = X.shape[1], i, j
    out_arr = np.empty(m)
    cdef double[::1] out = out_arr
    cdef double acc
    for i in range(m):
        acc = coeffs[0]
        for j in range(n):
            acc += coeffs[j + 1] * X[i, j]
        out[i] = acc
    return out_arr


def forward_many(const double[::1] coeffs, seeds, Py_ssize_t steps):
    src = np.ascontiguousarray(seeds, dtype=np.float64)
    cdef Py_ssize_t m = src.shape[0], n = src.shape[1], i, j, k
    win_arr = src.copy()
    cdef double[:, ::1] win = win_arr
    out_arr = np.empty((m, steps))
    cdef double[:, ::1] out = out_arr
    cdef double acc
    for i in range(m):
        for k in range(steps):
            acc = coeffs[0]
            for j in range(n):
                acc += coeffs[j + 1] * win[i, j]
            out[i, k] = acc
            for j in range(n - 1, 0, -1):
                win[i, j] = win[i, j - 1]
            win[i, 0] = acc
    return out_arr


def scan_extrema(const double[::1] iterations, const double[::1] values):
    cdef Py_ssize_t N = values.shape[0], j, count = 0
    cdef double k2, k3
    if N < 4:
        return np.empty(0, dtype=np.intp), np.empty(0, dtype=np.int8)
    pos_arr = np.empty(N - 3, dtype=np.intp)
    kind_arr = np.empty(N - 3, dtype=np.int8)
    cdef Py_ssize_t[::1] pos = pos_arr
    cdef signed char[::1] kinds = kind_arr
    k3 = (values[2] - values[1]) / (iterations[2] - iterations[1])
    for j in range(N - 3):
        k2 = k3
        k3 = (values[j + 3] - values[j + 2]) / (iterations[j + 3] - iterations[j + 2])
        if k2 > 0 and k3 < 0:
            pos[count] = j + 2
            kinds[count] = 1
            count += 1
        elif k2 < 0 and k3 > 0:
            pos[count] = j + 2
            kinds[count] = -1
            count += 1
    return pos_arr[:count].copy(), kind_arr[:count].copy()
