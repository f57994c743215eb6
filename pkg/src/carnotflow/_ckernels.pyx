# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled versions of the hot kernels in ``_kernels_py``.

Per-matrix and per-row work is independent, so the parallel loops give
results that do not depend on the thread schedule.
"""

import numpy as np
cimport numpy as cnp
from cython.parallel cimport prange
from libc.math cimport sqrt, fabs, INFINITY

cnp.import_array()

DEF JACOBI_RTOL = 1e-12
DEF MAX_SWEEPS = 60


cdef void _jacobi_one(double[:, :] A, double[:] w) noexcept nogil:
    cdef Py_ssize_t m = A.shape[0]
    cdef Py_ssize_t p, q, k, sweep, i, j
    cdef double scale = 0.0, off, apq, theta, t, c, s, x, y
    for i in range(m):
        for j in range(m):
            scale += A[i, j] * A[i, j]
    scale = sqrt(scale)
    for sweep in range(MAX_SWEEPS):
        off = 0.0
        for p in range(m - 1):
            for q in range(p + 1, m):
                off += A[p, q] * A[p, q]
        if sqrt(2.0 * off) <= JACOBI_RTOL * scale:
            break
        for p in range(m - 1):
            for q in range(p + 1, m):
                apq = A[p, q]
                if apq == 0.0:
                    continue
                theta = (A[q, q] - A[p, p]) / (2.0 * apq)
                if theta == 0.0:
                    t = 1.0
                elif theta > 0.0:
                    t = 1.0 / (theta + sqrt(theta * theta + 1.0))
                else:
                    t = -1.0 / (-theta + sqrt(theta * theta + 1.0))
                c = 1.0 / sqrt(t * t + 1.0)
                s = t * c
                for k in range(m):
                    x = A[k, p]
                    y = A[k, q]
                    A[k, p] = c * x - s * y
                    A[k, q] = s * x + c * y
                for k in range(m):
                    x = A[p, k]
                    y = A[q, k]
                    A[p, k] = c * x - s * y
                    A[q, k] = s * x + c * y
                A[p, q] = 0.0
                A[q, p] = 0.0
    for i in range(m):
        w[i] = A[i, i]
    # insertion sort, m is tiny
    for i in range(1, m):
        x = w[i]
        j = i - 1
        while j >= 0 and w[j] > x:
            w[j + 1] = w[j]
            j -= 1
        w[j + 1] = x


def jacobi_eigvals(mats, int num_threads=1):
    cdef double[:, :, :] A = np.array(mats, dtype=np.float64, copy=True, order="C")
    cdef Py_ssize_t n = A.shape[0], m = A.shape[1], i
    out = np.empty((n, m), dtype=np.float64)
    cdef double[:, :] w = out
    if num_threads <= 1:
        for i in range(n):
            _jacobi_one(A[i], w[i])
    else:
        for i in prange(n, nogil=True, num_threads=num_threads, schedule="static"):
            _jacobi_one(A[i], w[i])
    return out


def minplus(a, K, double scale, int num_threads=1):
    cdef const double[:] av = np.ascontiguousarray(a, dtype=np.float64)
    cdef const double[:, :] Kv = np.ascontiguousarray(K, dtype=np.float64)
    cdef Py_ssize_t nx = Kv.shape[0], ny = Kv.shape[1], x, y
    out = np.empty(nx, dtype=np.float64)
    cdef double[:] ov = out
    cdef double best, val
    if num_threads < 1:
        num_threads = 1
    for x in prange(nx, nogil=True, num_threads=num_threads, schedule="static"):
        best = INFINITY
        for y in range(ny):
            val = av[y] + scale * Kv[x, y]
            if val < best:
                best = val
        ov[x] = best
    return out


def horizontal_assemble(A, dA, grad, hess, int num_threads=1):
    cdef const double[:, :, :] Av = np.ascontiguousarray(A, dtype=np.float64)
    cdef const double[:, :, :] dAv = np.ascontiguousarray(dA, dtype=np.float64)
    cdef const double[:, :] gv = np.ascontiguousarray(grad, dtype=np.float64)
    cdef const double[:, :, :] Hv = np.ascontiguousarray(hess, dtype=np.float64)
    cdef Py_ssize_t N = Av.shape[0], m1 = Av.shape[1], n = Av.shape[2]
    cdef Py_ssize_t p, i, j, k, l
    D0 = np.zeros((N, m1), dtype=np.float64)
    M = np.zeros((N, m1, m1), dtype=np.float64)
    cdef double[:, :] D0v = D0
    cdef double[:, :, :] Mv = M
    cdef double acc, mij, mji
    if num_threads < 1:
        num_threads = 1
    for p in prange(N, nogil=True, num_threads=num_threads, schedule="static"):
        for i in range(m1):
            acc = 0.0
            for l in range(n):
                acc = acc + Av[p, i, l] * gv[p, l]
            D0v[p, i] = acc
        for i in range(m1):
            for j in range(m1):
                acc = 0.0
                for k in range(n):
                    for l in range(n):
                        acc = acc + Av[p, i, k] * Av[p, j, l] * Hv[p, k, l]
                for k in range(n):
                    for l in range(n):
                        acc = acc + Av[p, i, k] * dAv[j, l, k] * gv[p, l]
                Mv[p, i, j] = acc
        for i in range(m1):
            for j in range(i + 1, m1):
                mij = Mv[p, i, j]
                mji = Mv[p, j, i]
                Mv[p, i, j] = 0.5 * (mij + mji)
                Mv[p, j, i] = 0.5 * (mij + mji)
    return D0, M
