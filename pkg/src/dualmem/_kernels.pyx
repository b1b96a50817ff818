# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled hot loops for fast-memory updates.

Same contracts as ``_kernels_py``; selected at import by ``dualmem._backend``.
"""

import numpy as np
from libc.math cimport sqrt
from libc.stdlib cimport malloc, free


def rls_rank1_update(double[:, ::1] P, double[:, ::1] B, double[:, ::1] W,
                     const double[::1] phi, const double[::1] y):
    cdef Py_ssize_t d = P.shape[0]
    cdef Py_ssize_t k = B.shape[1]
    cdef Py_ssize_t i, j, jj, c, nnz = 0
    cdef double f, g, denom, scale, vi
    cdef double *row
    cdef double *v
    if P.shape[1] != d or phi.shape[0] != d or B.shape[0] != d or W.shape[0] != d:
        raise ValueError("dimension mismatch in rls_rank1_update")
    if W.shape[1] != k or y.shape[0] != k:
        raise ValueError("target count mismatch in rls_rank1_update")

    cdef Py_ssize_t *nz = <Py_ssize_t *> malloc(d * sizeof(Py_ssize_t))
    cdef double *u = <double *> malloc(d * sizeof(double))
    cdef double *err = <double *> malloc(k * sizeof(double))
    if nz == NULL or u == NULL or err == NULL:
        free(nz); free(u); free(err)
        raise MemoryError()
    with nogil:
        for j in range(d):
            if phi[j] != 0.0:
                nz[nnz] = j
                nnz += 1
        for i in range(d):
            u[i] = 0.0
        # u = P phi, reading only the rows hit by nonzero phi (P is symmetric)
        for jj in range(nnz):
            j = nz[jj]
            f = phi[j]
            row = &P[j, 0]
            for i in range(d):
                u[i] += f * row[i]
        denom = 1.0
        for jj in range(nnz):
            j = nz[jj]
            denom += phi[j] * u[j]
        for c in range(k):
            err[c] = y[c]
        for jj in range(nnz):
            j = nz[jj]
            f = phi[j]
            for c in range(k):
                err[c] -= f * W[j, c]
                B[j, c] += f * y[c]
        for i in range(d):
            g = u[i] / denom
            for c in range(k):
                W[i, c] += g * err[c]
        # P -= v v' with v = u / sqrt(denom); vi * v[j] == v[j] * vi keeps P exactly symmetric
        scale = 1.0 / sqrt(denom)
        v = u
        for i in range(d):
            v[i] = u[i] * scale
        for i in range(d):
            vi = v[i]
            row = &P[i, 0]
            for j in range(d):
                row[j] -= vi * v[j]
    free(nz)
    free(u)
    free(err)
    return denom


def eval_products(V, kernels, out=None):
    cdef const double[:, ::1] v = np.ascontiguousarray(V, dtype=np.float64)
    cdef const Py_ssize_t[:, ::1] ker = np.ascontiguousarray(kernels, dtype=np.intp)
    cdef Py_ssize_t n = v.shape[0], m = ker.shape[0], order = ker.shape[1] if ker.shape[0] else 0
    if out is None:
        out = np.empty((n, m), dtype=np.float64)
    cdef double[:, :] o = out
    cdef Py_ssize_t r, p, j
    cdef double acc
    with nogil:
        for r in range(n):
            for p in range(m):
                acc = v[r, ker[p, 0]]
                for j in range(1, order):
                    acc = acc * v[r, ker[p, j]]
                o[r, p] = acc
    return out
