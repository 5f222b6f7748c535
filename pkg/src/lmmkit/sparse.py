"""Compressed-sparse-column matrices and a simplicial sparse Cholesky.

The factorization is split into a symbolic phase (elimination tree, row
reach sets, fill pattern, permutation handling) run once per model, and a
numeric phase (value updates, triangular solves) that is dispatched to the
compiled or pure-numpy kernel backend in :mod:`lmmkit.kernels`.  Products
between matrices with fixed patterns are compiled into ``MultiplyPlan``
objects so repeated evaluations are gather/scatter only.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import kernels
from .errors import ModelError, NotPositiveDefiniteError, PlsError


@dataclass
class SparseCsc:
    nrow: int
    ncol: int
    colptr: np.ndarray
    rowidx: np.ndarray
    values: np.ndarray

    @property
    def nnz(self) -> int:
        return len(self.rowidx)

    def copy(self) -> "SparseCsc":
        return SparseCsc(self.nrow, self.ncol, self.colptr.copy(),
                         self.rowidx.copy(), self.values.copy())

    def validate(self):
        if len(self.colptr) != self.ncol + 1:
            raise ModelError("bad column pointer length")
        if self.colptr[0] != 0 or self.colptr[-1] != self.nnz:
            raise ModelError("bad column pointer bounds")
        if np.any(np.diff(self.colptr) < 0):
            raise ModelError("column pointers must be nondecreasing")
        for j in range(self.ncol):
            rows = self.rowidx[self.colptr[j]:self.colptr[j + 1]]
            if len(rows) and (np.any(np.diff(rows) <= 0) or rows[0] < 0
                              or rows[-1] >= self.nrow):
                raise ModelError(f"bad row indices in column {j}")
        return self

    def col(self, j):
        sl = slice(self.colptr[j], self.colptr[j + 1])
        return self.rowidx[sl], self.values[sl]

    def to_dense(self) -> np.ndarray:
        out = np.zeros((self.nrow, self.ncol))
        for j in range(self.ncol):
            rows, vals = self.col(j)
            out[rows, j] = vals
        return out

    def scale_columns(self, d: np.ndarray) -> "SparseCsc":
        """Return A @ diag(d) with the same pattern."""
        if len(d) != self.ncol:
            raise ModelError("diagonal length mismatch")
        reps = np.diff(self.colptr)
        vals = self.values * np.repeat(d, reps)
        return SparseCsc(self.nrow, self.ncol, self.colptr.copy(),
                         self.rowidx.copy(), vals)


def from_triplets(nrow, ncol, rows, cols, vals) -> SparseCsc:
    rows = np.asarray(rows, dtype=np.int64)
    cols = np.asarray(cols, dtype=np.int64)
    vals = np.asarray(vals, dtype=np.float64)
    order = np.lexsort((rows, cols))
    rows, cols, vals = rows[order], cols[order], vals[order]
    # merge duplicates
    if len(rows):
        keep = np.ones(len(rows), dtype=bool)
        keep[1:] = (np.diff(rows) != 0) | (np.diff(cols) != 0)
        idx = np.cumsum(keep) - 1
        merged = np.zeros(keep.sum())
        np.add.at(merged, idx, vals)
        rows, cols, vals = rows[keep], cols[keep], merged
    colptr = np.zeros(ncol + 1, dtype=np.int64)
    np.add.at(colptr, cols + 1, 1)
    colptr = np.cumsum(colptr)
    return SparseCsc(nrow, ncol, colptr, rows, vals)


def from_dense(A: np.ndarray, keep=None) -> SparseCsc:
    A = np.asarray(A, dtype=np.float64)
    mask = A != 0 if keep is None else keep
    rows, cols = np.nonzero(mask)
    return from_triplets(A.shape[0], A.shape[1], rows, cols, A[rows, cols])


def identity(n: int, value: float = 1.0) -> SparseCsc:
    idx = np.arange(n, dtype=np.int64)
    return SparseCsc(n, n, np.arange(n + 1, dtype=np.int64), idx,
                     np.full(n, value))


def sp_transpose(A: SparseCsc) -> SparseCsc:
    cols = np.repeat(np.arange(A.ncol, dtype=np.int64), np.diff(A.colptr))
    return from_triplets(A.ncol, A.nrow, cols, A.rowidx, A.values)


class TransposePlan:
    """Position map so that transposing with a fixed pattern is one gather."""

    def __init__(self, A: SparseCsc):
        cols = np.repeat(np.arange(A.ncol, dtype=np.int64), np.diff(A.colptr))
        order = np.lexsort((cols, A.rowidx))
        self.gather = order
        self.shape = (A.ncol, A.nrow)
        self.rowidx = cols[order]
        colptr = np.zeros(A.nrow + 1, dtype=np.int64)
        np.add.at(colptr, A.rowidx[order] + 1, 1)
        self.colptr = np.cumsum(colptr)

    def apply(self, values: np.ndarray) -> SparseCsc:
        return SparseCsc(self.shape[0], self.shape[1], self.colptr,
                         self.rowidx, values[self.gather])


class MultiplyPlan:
    """Symbolic product of two fixed sparsity patterns.

    ``apply(avals, bvals)`` recomputes only the numeric values; with
    ``lower=True`` the result keeps rows >= column (symmetric-lower
    storage for cross products).
    """

    def __init__(self, A: SparseCsc, B: SparseCsc, lower: bool = False):
        if A.ncol != B.nrow:
            raise ModelError(f"dimension mismatch: {A.nrow}x{A.ncol} times "
                             f"{B.nrow}x{B.ncol}")
        colptr = [0]
        rowidx = []
        a_pos, b_pos, out_pos = [], [], []
        base = 0
        for j in range(B.ncol):
            contrib = {}
            for pb in range(B.colptr[j], B.colptr[j + 1]):
                k = B.rowidx[pb]
                for pa in range(A.colptr[k], A.colptr[k + 1]):
                    i = A.rowidx[pa]
                    if lower and i < j:
                        continue
                    contrib.setdefault(i, []).append((pa, pb))
            rows = sorted(contrib)
            for local, i in enumerate(rows):
                for pa, pb in contrib[i]:
                    a_pos.append(pa)
                    b_pos.append(pb)
                    out_pos.append(base + local)
            rowidx.extend(rows)
            base += len(rows)
            colptr.append(base)
        self.shape = (A.nrow, B.ncol)
        self.colptr = np.asarray(colptr, dtype=np.int64)
        self.rowidx = np.asarray(rowidx, dtype=np.int64)
        self.a_pos = np.asarray(a_pos, dtype=np.int64)
        self.b_pos = np.asarray(b_pos, dtype=np.int64)
        self.out_pos = np.asarray(out_pos, dtype=np.int64)

    def apply(self, avals: np.ndarray, bvals: np.ndarray) -> SparseCsc:
        vals = kernels.backend().mm_apply(avals, bvals, self.a_pos,
                                          self.b_pos, self.out_pos,
                                          len(self.rowidx))
        return SparseCsc(self.shape[0], self.shape[1], self.colptr,
                         self.rowidx, vals)


def sp_multiply(A: SparseCsc, B) -> "SparseCsc | np.ndarray":
    """A @ B for sparse B (sparse result) or dense B (dense result)."""
    if isinstance(B, SparseCsc):
        return MultiplyPlan(A, B).apply(A.values, B.values)
    B = np.asarray(B, dtype=np.float64)
    if B.ndim == 1:
        if A.ncol != len(B):
            raise ModelError(f"dimension mismatch: {A.nrow}x{A.ncol} times "
                             f"vector of length {len(B)}")
        return spmv(A, B)
    if A.ncol != B.shape[0]:
        raise ModelError(f"dimension mismatch: {A.nrow}x{A.ncol} times "
                         f"{B.shape[0]}x{B.shape[1]}")
    out = np.zeros((A.nrow, B.shape[1]))
    for j in range(A.ncol):
        rows, vals = A.col(j)
        if len(rows):
            out[rows] += vals[:, None] * B[j]
    return out


def sp_crossprod(A: SparseCsc) -> SparseCsc:
    """A'A stored as the lower triangle (rows >= column)."""
    At = sp_transpose(A)
    return MultiplyPlan(At, A, lower=True).apply(At.values, A.values)


def spmv(A: SparseCsc, x: np.ndarray) -> np.ndarray:
    out = np.zeros(A.nrow)
    reps = np.diff(A.colptr)
    np.add.at(out, A.rowidx, A.values * np.repeat(x, reps))
    return out


def spmv_t(A: SparseCsc, x: np.ndarray) -> np.ndarray:
    """A' @ x without materializing the transpose."""
    out = np.zeros(A.ncol)
    cols = np.repeat(np.arange(A.ncol, dtype=np.int64), np.diff(A.colptr))
    np.add.at(out, cols, A.values * x[A.rowidx])
    return out


def symmetric_to_dense(A_lower: SparseCsc) -> np.ndarray:
    dense = A_lower.to_dense()
    return dense + np.tril(dense, -1).T


def write_matrix_market(A: SparseCsc, path):
    """Coordinate-format dump (1-based indices) for debugging."""
    with open(path, "w", encoding="ascii") as fh:
        fh.write("%%MatrixMarket matrix coordinate real general\n")
        fh.write(f"{A.nrow} {A.ncol} {A.nnz}\n")
        for j in range(A.ncol):
            rows, vals = A.col(j)
            for i, v in zip(rows, vals):
                fh.write(f"{i + 1} {j + 1} {v:.17g}\n")


def _minimum_degree(q, adj):
    """Greedy minimum-degree ordering on an adjacency-set graph."""
    adj = [set(s) for s in adj]
    alive = set(range(q))
    order = []
    while alive:
        k = min(alive, key=lambda v: (len(adj[v]), v))
        order.append(k)
        alive.discard(k)
        neigh = adj[k] & alive
        for v in neigh:
            adj[v].discard(k)
            adj[v] |= (neigh - {v})
    return np.asarray(order, dtype=np.int64)


class CholFactor:
    """Sparse Cholesky factor with a frozen symbolic pattern.

    ``update`` refactors for new values of the (symmetric-lower) input with
    an added multiple of the identity; the pattern arrays are never
    reallocated, which callers rely on for repeated evaluations.
    """

    def __init__(self, pattern: SparseCsc, ordering: str = "natural"):
        if pattern.nrow != pattern.ncol:
            raise ModelError("Cholesky needs a square matrix")
        q = pattern.nrow
        self.q = q
        if ordering == "natural":
            perm = np.arange(q, dtype=np.int64)
        elif ordering == "amd":
            adj = [set() for _ in range(q)]
            for j in range(q):
                rows, _ = pattern.col(j)
                for i in rows:
                    if i != j:
                        adj[i].add(j)
                        adj[j].add(i)
            perm = _minimum_degree(q, adj)
        else:
            raise ModelError(f"unknown ordering {ordering!r}")
        self.perm = perm
        self.iperm = np.empty(q, dtype=np.int64)
        self.iperm[perm] = np.arange(q)
        self._build_symbolic(pattern)
        self.Lx = np.zeros(len(self.Li))
        self.factored = False

    # -- symbolic phase -------------------------------------------------
    def _build_symbolic(self, pattern: SparseCsc):
        q = self.q
        iperm = self.iperm
        # permuted upper-triangular pattern, with a gather map back into the
        # lower-triangle value array (-1 marks synthesized diagonal entries)
        rows, cols, srcs = [], [], []
        seen_diag = np.zeros(q, dtype=bool)
        for c in range(pattern.ncol):
            for p in range(pattern.colptr[c], pattern.colptr[c + 1]):
                r = pattern.rowidx[p]
                if r < c:
                    raise ModelError("symmetric input must store the lower "
                                     "triangle only")
                ir, ic = iperm[r], iperm[c]
                if ir > ic:
                    ir, ic = ic, ir
                rows.append(ir)
                cols.append(ic)
                srcs.append(p)
                if ir == ic:
                    seen_diag[ir] = True
        for k in np.nonzero(~seen_diag)[0]:
            rows.append(k)
            cols.append(k)
            srcs.append(-1)
        rows = np.asarray(rows, dtype=np.int64)
        cols = np.asarray(cols, dtype=np.int64)
        srcs = np.asarray(srcs, dtype=np.int64)
        order = np.lexsort((rows, cols))
        rows, cols, srcs = rows[order], cols[order], srcs[order]
        Up = np.zeros(q + 1, dtype=np.int64)
        np.add.at(Up, cols + 1, 1)
        self.Up = np.cumsum(Up)
        self.Ui = rows
        self.u_gather = srcs
        self.u_diag = np.nonzero(rows == cols)[0]

        # elimination tree
        parent = np.full(q, -1, dtype=np.int64)
        ancestor = np.full(q, -1, dtype=np.int64)
        for k in range(q):
            for p in range(self.Up[k], self.Up[k + 1]):
                i = self.Ui[p]
                while i != -1 and i < k:
                    nxt = ancestor[i]
                    ancestor[i] = k
                    if nxt == -1:
                        parent[i] = k
                    i = nxt
        self.parent = parent

        # row reach sets in topological order
        w = np.full(q, -1, dtype=np.int64)
        stack = np.empty(q, dtype=np.int64)
        path = np.empty(q, dtype=np.int64)
        reach_ptr = np.zeros(q + 1, dtype=np.int64)
        reach_idx = []
        for k in range(q):
            top = q
            w[k] = k
            for p in range(self.Up[k], self.Up[k + 1]):
                i = self.Ui[p]
                if i >= k:
                    continue
                ln = 0
                while w[i] != k:
                    path[ln] = i
                    ln += 1
                    w[i] = k
                    i = parent[i]
                while ln > 0:
                    ln -= 1
                    top -= 1
                    stack[top] = path[ln]
            reach_idx.extend(stack[top:q])
            reach_ptr[k + 1] = len(reach_idx)
        self.reach_ptr = reach_ptr
        self.reach_idx = np.asarray(reach_idx, dtype=np.int64)

        # fill pattern of L and the storage slot of each reach entry
        counts = np.ones(q, dtype=np.int64)
        np.add.at(counts, self.reach_idx, 1)
        Lp = np.zeros(q + 1, dtype=np.int64)
        Lp[1:] = np.cumsum(counts)
        Li = np.empty(Lp[-1], dtype=np.int64)
        nextpos = Lp[:-1].copy() + 1
        Li[Lp[:-1]] = np.arange(q)
        store = np.empty(len(self.reach_idx), dtype=np.int64)
        for k in range(q):
            for t in range(reach_ptr[k], reach_ptr[k + 1]):
                i = self.reach_idx[t]
                pos = nextpos[i]
                Li[pos] = k
                store[t] = pos
                nextpos[i] += 1
        self.Lp = Lp
        self.Li = Li
        self.reach_store = store

    # -- numeric phase --------------------------------------------------
    def update(self, A: SparseCsc, shift: float = 0.0) -> "CholFactor":
        """Refactor so that L L' = P (A + shift*I) P'."""
        if A.nrow != self.q or A.ncol != self.q:
            raise ModelError("pattern mismatch in numeric update")
        if shift < 0:
            raise ModelError("shift must be nonnegative")
        has_src = self.u_gather >= 0
        Ux = np.zeros(len(self.u_gather))
        if A.nnz:
            Ux[has_src] = A.values[self.u_gather[has_src]]
        if shift:
            Ux[self.u_diag] += shift
        amax = float(np.max(np.abs(Ux))) if len(Ux) else shift
        tol = 1e-14 * max(amax, shift)
        bad = kernels.backend().chol_update(
            self.Up, self.Ui, Ux, self.Lp, self.Li, self.reach_ptr,
            self.reach_idx, self.reach_store, self.Lx, tol)
        if bad >= 0:
            self.factored = False
            raise NotPositiveDefiniteError(int(self.perm[bad]))
        self.factored = True
        return self

    def _require_factored(self):
        if not self.factored:
            raise PlsError("factor has no numeric values yet")

    def solve(self, rhs, mode: str):
        """Apply one of P, L^-1, L^-T, P' to a vector or dense matrix."""
        rhs = np.asarray(rhs, dtype=np.float64)
        vec = rhs.ndim == 1
        b = rhs.reshape(self.q, -1).copy()
        if mode == "P":
            out = b[self.perm]
        elif mode == "Pt":
            out = np.empty_like(b)
            out[self.perm] = b
        elif mode in ("L", "Lt"):
            self._require_factored()
            fn = kernels.backend().lsolve if mode == "L" else kernels.backend().ltsolve
            fn(self.Lp, self.Li, self.Lx, b)
            out = b
        else:
            raise ModelError(f"unknown solve mode {mode!r}")
        return out[:, 0] if vec else out

    def solve_A(self, rhs):
        """Full (A + shift I)^-1 rhs via Pt . Lt . L . P."""
        x = self.solve(rhs, "P")
        x = self.solve(x, "L")
        x = self.solve(x, "Lt")
        return self.solve(x, "Pt")

    def logdet2(self) -> float:
        self._require_factored()
        return 2.0 * float(np.sum(np.log(self.Lx[self.Lp[:-1]])))

    def matrix(self) -> SparseCsc:
        self._require_factored()
        return SparseCsc(self.q, self.q, self.Lp, self.Li, self.Lx)


def symbolic_cholesky(pattern: SparseCsc, ordering: str = "natural") -> CholFactor:
    """Analyze a symmetric (lower-stored) pattern; values come later."""
    return CholFactor(pattern, ordering)
