"""Pure-numpy numeric kernels; same contracts as the compiled extension."""

import math

import numpy as np

NAME = "pure"


def mm_apply(avals, bvals, a_pos, b_pos, out_pos, nnz_out):
    out = np.zeros(nnz_out)
    np.add.at(out, out_pos, avals[a_pos] * bvals[b_pos])
    return out


def chol_update(Up, Ui, Ux, Lp, Li, reach_ptr, reach_idx, reach_store, Lx, tol):
    """Up-looking factorization over a precomputed pattern.

    Returns -1 on success or the (permuted) column index of a failed pivot.
    """
    q = len(Up) - 1
    x = np.zeros(q)
    for k in range(q):
        lo, hi = Up[k], Up[k + 1]
        x[Ui[lo:hi]] = Ux[lo:hi]
        d = x[k]
        x[k] = 0.0
        for t in range(reach_ptr[k], reach_ptr[k + 1]):
            i = reach_idx[t]
            lki = x[i] / Lx[Lp[i]]
            x[i] = 0.0
            spos = reach_store[t]
            start = Lp[i] + 1
            if spos > start:
                x[Li[start:spos]] -= Lx[start:spos] * lki
            d -= lki * lki
            Lx[spos] = lki
        if d <= tol:
            return k
        Lx[Lp[k]] = math.sqrt(d)
    return -1


def lsolve(Lp, Li, Lx, B):
    """In-place forward solve L X = B for dense B of shape (q, m)."""
    q = len(Lp) - 1
    for j in range(q):
        B[j] /= Lx[Lp[j]]
        lo, hi = Lp[j] + 1, Lp[j + 1]
        if hi > lo:
            B[Li[lo:hi]] -= Lx[lo:hi, None] * B[j]


def ltsolve(Lp, Li, Lx, B):
    """In-place backward solve L' X = B for dense B of shape (q, m)."""
    q = len(Lp) - 1
    for j in range(q - 1, -1, -1):
        lo, hi = Lp[j] + 1, Lp[j + 1]
        if hi > lo:
            B[j] -= Lx[lo:hi] @ B[Li[lo:hi]]
        B[j] /= Lx[Lp[j]]
