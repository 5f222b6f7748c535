"""Penalized-least-squares engine: theta -> profiled deviance / REML criterion.

Constant cross products are formed once; each evaluation updates the
relative covariance factor, refactors, runs the nested permutation and
triangular solves, refreshes the linear predictor, and returns the
criterion.  All per-evaluation sparse work goes through pattern plans and
the kernel backend.
"""

from __future__ import annotations

import math

import numpy as np

from .errors import ModelError, PlsError
from .modelbuild import ModelSpec
from .sparse import (MultiplyPlan, TransposePlan, sp_multiply, spmv,
                     spmv_t, sp_transpose, symbolic_cholesky)

_LOG2PI = math.log(2.0 * math.pi)


class DevState:
    """Mutable evaluation state for one model specification.

    A state is single-threaded; use :meth:`clone` for concurrent work
    (bootstrap replicates, profile branches) so the cached factorization of
    a finished fit stays intact.
    """

    def __init__(self, spec: ModelSpec, ordering: str = "natural"):
        self.spec = spec
        self.reml = spec.reml
        self.ordering = ordering
        self.X = spec.X
        self.offset = spec.offset
        self.weights = spec.weights
        self.sqrtW = spec.sqrtW
        self.logW = float(np.sum(np.log(spec.weights)))
        self.Zt = spec.Zt
        self.Z = sp_transpose(spec.Zt)
        self.ZtW = spec.Zt.scale_columns(self.sqrtW)
        self.lambdat = spec.Lambdat.copy()
        self.lind0 = spec.Lind - 1

        self._mplan = MultiplyPlan(self.lambdat, self.ZtW)
        m0 = self._mplan.apply(self.lambdat.values, self.ZtW.values)
        self._tplan = TransposePlan(m0)
        mt0 = self._tplan.apply(m0.values)
        self._xplan = MultiplyPlan(m0, mt0, lower=True)
        a0 = self._xplan.apply(m0.values, mt0.values)
        self.factor = symbolic_cholesky(a0, ordering)

        self.set_response(spec.y, spec.offset)

        q, p = spec.q, spec.p
        self.theta = None
        self.M = None
        self.cu = np.zeros(q)
        self.RZX = np.zeros((q, p))
        self.RXtRX = np.zeros((p, p))
        self.RX_chol = np.zeros((p, p))  # lower factor of RXtRX
        self.beta = np.zeros(p)
        self.u = np.zeros(q)
        self.b = np.zeros(q)
        self.mu = np.zeros(spec.n)
        self.wtres = np.zeros(spec.n)
        self.pwrss = np.nan
        self.logdet_L2 = np.nan
        self.logdet_RX2 = 0.0
        self.n_eval = 0
        self._stage = 0

    # -- constants -------------------------------------------------------
    def set_response(self, y: np.ndarray, offset: np.ndarray | None = None):
        """Refresh the response-dependent constants; symbolic work is kept."""
        if offset is not None:
            self.offset = np.asarray(offset, dtype=np.float64)
        self.y = np.asarray(y, dtype=np.float64)
        if len(self.y) != self.spec.n:
            raise ModelError("response length mismatch")
        resid0 = self.weights * (self.y - self.offset)
        self.ZtWy = spmv(self.Zt, resid0)
        self.XtWy = self.X.T @ resid0
        wX = self.weights[:, None] * self.X
        self.ZtWX = sp_multiply(self.Zt, wX)
        self.XtWX = self.X.T @ wX
        self._stage = 0

    @property
    def n(self):
        return self.spec.n

    @property
    def p(self):
        return self.spec.p

    @property
    def q(self):
        return self.spec.q

    @property
    def deg_free(self) -> int:
        return self.n - self.p if self.reml else self.n

    def clone(self, reml: bool | None = None) -> "DevState":
        """Independent evaluation state sharing all immutable structure."""
        new = object.__new__(DevState)
        new.__dict__.update(self.__dict__)
        new.lambdat = self.lambdat.copy()
        new.factor = _clone_symbolic(self.factor)
        q, p, n = self.q, self.p, self.n
        new.cu = np.zeros(q)
        new.RZX = np.zeros((q, p))
        new.RXtRX = np.zeros((p, p))
        new.RX_chol = np.zeros((p, p))
        new.beta = np.zeros(p)
        new.u = np.zeros(q)
        new.b = np.zeros(q)
        new.mu = np.zeros(n)
        new.wtres = np.zeros(n)
        new.pwrss = np.nan
        new.theta = None
        new.n_eval = 0
        new._stage = 0
        if reml is not None and reml != self.reml:
            new.reml = reml
        return new

    # -- the four evaluation steps ----------------------------------------
    def step1_update_lambda(self, theta):
        theta = np.asarray(theta, dtype=np.float64)
        if len(theta) != self.spec.m:
            raise ModelError(f"theta has length {len(theta)}, "
                             f"expected {self.spec.m}")
        if np.any(theta < self.spec.lower - 1e-10):
            raise PlsError("theta violates its lower bounds")
        self.theta = theta.copy()
        self.lambdat.values = theta[self.lind0]
        m = self._mplan.apply(self.lambdat.values, self.ZtW.values)
        mt = self._tplan.apply(m.values)
        a = self._xplan.apply(m.values, mt.values)
        self.M = m
        self.factor.update(a, shift=1.0)
        self._stage = 1

    def step2_solve(self):
        if self._stage < 1:
            raise PlsError("step 1 has not run")
        fac = self.factor
        rhs = spmv(self.lambdat, self.ZtWy)
        self.cu = fac.solve(fac.solve(rhs, "P"), "L")
        if self.p:
            rzx_rhs = sp_multiply(self.lambdat, self.ZtWX)
            self.RZX = fac.solve(fac.solve(rzx_rhs, "P"), "L")
            self.RXtRX = self.XtWX - self.RZX.T @ self.RZX
            try:
                self.RX_chol = np.linalg.cholesky(self.RXtRX)
            except np.linalg.LinAlgError:
                raise PlsError("fixed-effects rank deficiency or PLS "
                               "failure: X'WX - RZX'RZX is not positive "
                               "definite") from None
            self.logdet_RX2 = 2.0 * float(
                np.sum(np.log(np.diag(self.RX_chol))))
            rhs_beta = self.XtWy - self.RZX.T @ self.cu
            z = np.linalg.solve(self.RX_chol, rhs_beta)
            self.beta = np.linalg.solve(self.RX_chol.T, z)
        else:
            self.logdet_RX2 = 0.0
            self.beta = np.zeros(0)
        resid_u = self.cu - (self.RZX @ self.beta if self.p else 0.0)
        self.u = fac.solve(fac.solve(resid_u, "Lt"), "Pt")
        self.b = spmv_t(self.lambdat, self.u)
        self._stage = 2

    def step3_linpred(self):
        if self._stage < 2:
            raise PlsError("step 2 has not run")
        self.mu = spmv(self.Z, self.b) + self.offset
        if self.p:
            self.mu += self.X @ self.beta
        self.wtres = self.sqrtW * (self.y - self.mu)
        self._stage = 3

    def step4_criterion(self) -> float:
        if self._stage < 3:
            raise PlsError("step 3 has not run")
        self.pwrss = float(self.wtres @ self.wtres + self.u @ self.u)
        self.logdet_L2 = self.factor.logdet2()
        logdet = self.logdet_L2 - self.logW
        if self.reml:
            logdet += self.logdet_RX2
        df = self.deg_free
        self._stage = 4
        return logdet + df * (1.0 + _LOG2PI + math.log(self.pwrss)
                              - math.log(df))

    def evaluate(self, theta) -> float:
        """The optimizer-facing entry: run all four steps in order."""
        self.step1_update_lambda(theta)
        self.step2_solve()
        self.step3_linpred()
        self.n_eval += 1
        return self.step4_criterion()

    def evaluate_at_sigma(self, theta, sigma: float) -> float:
        """Criterion with the scale parameter fixed instead of profiled."""
        if sigma <= 0:
            return math.inf
        self.step1_update_lambda(theta)
        self.step2_solve()
        self.step3_linpred()
        self.pwrss = float(self.wtres @ self.wtres + self.u @ self.u)
        self.logdet_L2 = self.factor.logdet2()
        logdet = self.logdet_L2 - self.logW
        if self.reml:
            logdet += self.logdet_RX2
        df = self.deg_free
        self.n_eval += 1
        self._stage = 4
        return logdet + df * (_LOG2PI + 2.0 * math.log(sigma)) \
            + self.pwrss / sigma ** 2

    @property
    def sigma2(self) -> float:
        if self._stage < 4:
            raise PlsError("no completed evaluation")
        return self.pwrss / self.deg_free


def _clone_symbolic(factor):
    new = object.__new__(type(factor))
    new.__dict__.update(factor.__dict__)
    new.Lx = np.zeros_like(factor.Lx)
    new.factored = False
    return new


def make_devfun(spec: ModelSpec, ordering: str = "natural") -> DevState:
    """Precompute constants and the symbolic factorization for a model."""
    return DevState(spec, ordering)


def pls_gradient(state: DevState, theta) -> np.ndarray:
    """Gradient of the profiled (ML) criterion; diagnostic only.

    Uses a dense inverse of the factored system, which is fine at the
    problem sizes this is meant to sanity-check.
    """
    theta = np.asarray(theta, dtype=np.float64)
    spec = state.spec
    diag_mask = spec.lower == 0
    if np.any(theta[diag_mask] <= 0):
        raise PlsError("gradient undefined at boundary")
    was_reml = state.reml
    state.reml = False
    try:
        state.evaluate(theta)
        q = state.q
        s_inv = state.factor.solve_A(np.eye(q))
        k_dense = sp_multiply(state.M, sp_transpose(state.ZtW)).to_dense()
        g_mat = s_inv @ k_dense
        t_vec = spmv(state.Zt, state.weights * (state.y - state.mu))
        lam_rows = state.lambdat.rowidx
        lam_cols = np.repeat(np.arange(q), np.diff(state.lambdat.colptr))
        grad = np.zeros(spec.m)
        dr2 = np.zeros(spec.m)
        contrib_trace = 2.0 * g_mat[lam_rows, lam_cols]
        contrib_resid = -2.0 * state.u[lam_rows] * t_vec[lam_cols]
        np.add.at(grad, state.lind0, contrib_trace)
        np.add.at(dr2, state.lind0, contrib_resid)
        grad += state.n * dr2 / state.pwrss
    finally:
        state.reml = was_reml
        state._stage = 0
    return grad
