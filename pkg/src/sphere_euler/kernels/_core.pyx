# cython: boundscheck=False, wraparound=False, cdivision=True
"""Compiled implementations of the hot kernels (see _fallback for reference)."""

import numpy as np

cimport numpy as cnp
from libc.math cimport acos, exp, log


def pairwise_dist(double[:, ::1] X, double[:, ::1] Y):
    cdef Py_ssize_t n = X.shape[0], m = Y.shape[0], i, j
    cdef double dot
    out = np.empty((n, m), dtype=np.float64)
    cdef double[:, ::1] o = out
    for i in range(n):
        for j in range(m):
            dot = X[i, 0] * Y[j, 0] + X[i, 1] * Y[j, 1] + X[i, 2] * Y[j, 2]
            if dot > 1.0:
                dot = 1.0
            elif dot < -1.0:
                dot = -1.0
            o[i, j] = acos(dot)
    return out


def pairwise_half_dsq(double[:, ::1] X, double[:, ::1] Y):
    cdef Py_ssize_t n = X.shape[0], m = Y.shape[0], i, j
    cdef double dot, d
    out = np.empty((n, m), dtype=np.float64)
    cdef double[:, ::1] o = out
    for i in range(n):
        for j in range(m):
            dot = X[i, 0] * Y[j, 0] + X[i, 1] * Y[j, 1] + X[i, 2] * Y[j, 2]
            if dot > 1.0:
                dot = 1.0
            elif dot < -1.0:
                dot = -1.0
            d = acos(dot)
            o[i, j] = 0.5 * d * d
    return out


def min_plus(double[:, ::1] C, double[::1] phi):
    cdef Py_ssize_t n = C.shape[0], m = C.shape[1], i, j
    cdef double best, v
    out = np.empty(n, dtype=np.float64)
    cdef double[::1] o = out
    for i in range(n):
        best = C[i, 0] - phi[0]
        for j in range(1, m):
            v = C[i, j] - phi[j]
            if v < best:
                best = v
        o[i] = best
    return out


def lse_rows(double[:, ::1] M):
    cdef Py_ssize_t n = M.shape[0], m = M.shape[1], i, j
    cdef double mx, s
    out = np.empty(n, dtype=np.float64)
    cdef double[::1] o = out
    for i in range(n):
        mx = M[i, 0]
        for j in range(1, m):
            if M[i, j] > mx:
                mx = M[i, j]
        s = 0.0
        for j in range(m):
            s += exp(M[i, j] - mx)
        o[i] = mx + log(s)
    return out
