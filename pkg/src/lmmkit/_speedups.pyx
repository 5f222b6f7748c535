# cython: boundscheck=False, wraparound=False, cdivision=True, language_level=3
"""Compiled numeric kernels for the sparse hot path."""

import numpy as np

cimport numpy as cnp
from libc.math cimport sqrt

NAME = "compiled"


def mm_apply(double[::1] avals, double[::1] bvals,
             long[::1] a_pos, long[::1] b_pos, long[::1] out_pos,
             Py_ssize_t nnz_out):
    out = np.zeros(nnz_out)
    cdef double[::1] o = out
    cdef Py_ssize_t t, n = a_pos.shape[0]
    for t in range(n):
        o[out_pos[t]] += avals[a_pos[t]] * bvals[b_pos[t]]
    return out


def chol_update(long[::1] Up, long[::1] Ui, double[::1] Ux,
                long[::1] Lp, long[::1] Li,
                long[::1] reach_ptr, long[::1] reach_idx, long[::1] reach_store,
                double[::1] Lx, double tol):
    cdef Py_ssize_t q = Up.shape[0] - 1
    cdef cnp.ndarray[cnp.float64_t, ndim=1] xarr = np.zeros(q)
    cdef double[::1] x = xarr
    cdef Py_ssize_t k, p, t, i, spos
    cdef double d, lki
    for k in range(q):
        for p in range(Up[k], Up[k + 1]):
            x[Ui[p]] = Ux[p]
        d = x[k]
        x[k] = 0.0
        for t in range(reach_ptr[k], reach_ptr[k + 1]):
            i = reach_idx[t]
            lki = x[i] / Lx[Lp[i]]
            x[i] = 0.0
            spos = reach_store[t]
            for p in range(Lp[i] + 1, spos):
                x[Li[p]] -= Lx[p] * lki
            d -= lki * lki
            Lx[spos] = lki
        if d <= tol:
            return k
        Lx[Lp[k]] = sqrt(d)
    return -1


def lsolve(long[::1] Lp, long[::1] Li, double[::1] Lx, double[:, ::1] B):
    cdef Py_ssize_t q = Lp.shape[0] - 1
    cdef Py_ssize_t m = B.shape[1]
    cdef Py_ssize_t j, p, c
    cdef double piv
    for j in range(q):
        piv = Lx[Lp[j]]
        for c in range(m):
            B[j, c] /= piv
        for p in range(Lp[j] + 1, Lp[j + 1]):
            for c in range(m):
                B[Li[p], c] -= Lx[p] * B[j, c]


def ltsolve(long[::1] Lp, long[::1] Li, double[::1] Lx, double[:, ::1] B):
    cdef Py_ssize_t q = Lp.shape[0] - 1
    cdef Py_ssize_t m = B.shape[1]
    cdef Py_ssize_t j, p, c
    cdef double piv
    for j in range(q - 1, -1, -1):
        for p in range(Lp[j] + 1, Lp[j + 1]):
            for c in range(m):
                B[j, c] -= Lx[p] * B[Li[p], c]
        piv = Lx[Lp[j]]
        for c in range(m):
            B[j, c] /= piv
