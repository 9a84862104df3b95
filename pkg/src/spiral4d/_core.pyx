# cython: boundscheck=False, wraparound=False, cdivision=True
"""Compiled kernels for the hot inner loops: spiral gather/scatter and the
sparse unpooling matrix products. API mirrors spiral4d._kernels_np."""

import numpy as np

cimport cython
cimport numpy as cnp

BACKEND_NAME = "compiled"

ctypedef fused real:
    float
    double


def gather_rows(const real[:, ::1] x, const cnp.int64_t[::1] idx):
    cdef Py_ssize_t r_out = idx.shape[0]
    cdef Py_ssize_t d = x.shape[1]
    if real is float:
        out_np = np.zeros((r_out, d), dtype=np.float32)
    else:
        out_np = np.zeros((r_out, d), dtype=np.float64)
    cdef real[:, ::1] out = out_np
    cdef Py_ssize_t r, c
    cdef cnp.int64_t j
    with nogil:
        for r in range(r_out):
            j = idx[r]
            if j >= 0:
                for c in range(d):
                    out[r, c] = x[j, c]
    return out_np


def scatter_add_rows(const real[:, ::1] g, const cnp.int64_t[::1] idx, Py_ssize_t n_rows):
    cdef Py_ssize_t r_in = idx.shape[0]
    cdef Py_ssize_t d = g.shape[1]
    if real is float:
        out_np = np.zeros((n_rows, d), dtype=np.float32)
    else:
        out_np = np.zeros((n_rows, d), dtype=np.float64)
    cdef real[:, ::1] out = out_np
    cdef Py_ssize_t r, c
    cdef cnp.int64_t j
    with nogil:
        for r in range(r_in):
            j = idx[r]
            if j >= 0:
                for c in range(d):
                    out[j, c] += g[r, c]
    return out_np


def spmm(const cnp.int64_t[::1] rows, const cnp.int64_t[::1] cols,
         const real[::1] weights, const real[:, ::1] x, Py_ssize_t n_rows,
         row_starts=None):
    cdef Py_ssize_t nnz = rows.shape[0]
    cdef Py_ssize_t d = x.shape[1]
    if real is float:
        out_np = np.zeros((n_rows, d), dtype=np.float32)
    else:
        out_np = np.zeros((n_rows, d), dtype=np.float64)
    cdef real[:, ::1] out = out_np
    cdef Py_ssize_t i, c
    cdef cnp.int64_t r, cc
    cdef real w
    with nogil:
        for i in range(nnz):
            r = rows[i]
            cc = cols[i]
            w = weights[i]
            for c in range(d):
                out[r, c] += w * x[cc, c]
    return out_np


def spmm_adjoint(const cnp.int64_t[::1] rows, const cnp.int64_t[::1] cols,
                 const real[::1] weights, const real[:, ::1] g, Py_ssize_t n_cols,
                 perm=None, col_starts=None):
    cdef Py_ssize_t nnz = rows.shape[0]
    cdef Py_ssize_t d = g.shape[1]
    if real is float:
        out_np = np.zeros((n_cols, d), dtype=np.float32)
    else:
        out_np = np.zeros((n_cols, d), dtype=np.float64)
    cdef real[:, ::1] out = out_np
    cdef Py_ssize_t i, c
    cdef cnp.int64_t r, cc
    cdef real w
    with nogil:
        for i in range(nnz):
            r = rows[i]
            cc = cols[i]
            w = weights[i]
            for c in range(d):
                out[cc, c] += w * g[r, c]
    return out_np
