# cython: boundscheck=False, wraparound=False, cdivision=True
"""Compiled inner loops. Semantics must match ``_kernels_py`` exactly."""

import numpy as np
cimport numpy as cnp
from libc.math cimport sqrt

cnp.import_array()


def segment_sums(const double[::1] values, const long long[::1] lengths):
    cdef Py_ssize_t k, j, pos = 0
    cdef Py_ssize_t n = lengths.shape[0]
    cdef double acc
    out = np.empty(n, dtype=np.float64)
    cdef double[::1] o = out
    for k in range(n):
        acc = 0.0
        for j in range(lengths[k]):
            acc += values[pos]
            pos += 1
        o[k] = acc
    if pos != values.shape[0]:
        raise ValueError("segment lengths do not cover the value array")
    return out


cdef inline double _norm(double[::1] x) nogil:
    cdef Py_ssize_t i
    cdef double acc = 0.0
    for i in range(x.shape[0]):
        acc += x[i] * x[i]
    return sqrt(acc)


def staircase_norms(const double[::1] x0, long long n_steps, long long period,
                    double eps, double alpha, const double[:, ::1] noise,
                    bint literal_order=False):
    cdef Py_ssize_t d = x0.shape[0]
    cdef Py_ssize_t i, row = 0
    cdef long long t
    cdef bint use_noise = noise.shape[0] > 0
    cdef double grow = 1.0 + eps
    xs = np.array(x0, dtype=np.float64, copy=True)
    cdef double[::1] x = xs
    out = np.empty(n_steps + 1, dtype=np.float64)
    cdef double[::1] o = out
    if literal_order:
        for t in range(n_steps + 1):
            o[t] = _norm(x)
            if t > 0 and t % period == 0:
                for i in range(d):
                    x[i] = alpha * x[i]
            else:
                for i in range(d):
                    x[i] = grow * x[i] + (noise[row, i] if use_noise else 0.0)
                row += 1
    else:
        o[0] = _norm(x)
        for t in range(1, n_steps + 1):
            if t % period == 0:
                for i in range(d):
                    x[i] = alpha * x[i]
            else:
                for i in range(d):
                    x[i] = grow * x[i] + (noise[row, i] if use_noise else 0.0)
                row += 1
            o[t] = _norm(x)
    return out


def max_pair_ratio(const double[:, ::1] fx, const double[:, ::1] fy,
                   const double[:, ::1] x, const double[:, ::1] y):
    cdef Py_ssize_t n = x.shape[0], d_in = x.shape[1], d_out = fx.shape[1]
    cdef Py_ssize_t k, i, best_idx = -1
    cdef double num, den, diff, r, best = 0.0
    for k in range(n):
        den = 0.0
        for i in range(d_in):
            diff = x[k, i] - y[k, i]
            den += diff * diff
        if den == 0.0:
            continue
        num = 0.0
        for i in range(d_out):
            diff = fx[k, i] - fy[k, i]
            num += diff * diff
        r = sqrt(num / den)
        if best_idx < 0 or r > best:
            best = r
            best_idx = k
    return best, best_idx
