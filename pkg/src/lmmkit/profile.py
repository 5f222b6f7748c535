"""Likelihood profiling: signed-root deviance traces and intervals.

Each focal parameter (random-effect standard deviations and correlations,
the residual scale, each fixed-effect coefficient) is stepped away from its
estimate while every non-focal parameter is re-optimized.  Random-effect
parameters are profiled through a deviance reparameterized on the
sd/correlation scale with the residual scale supplied explicitly;
fixed-effect coefficients are profiled by moving the focal column into the
offset.  Traces are interpolated with a monotone cubic (linear fallback
with a warning) to invert for confidence limits.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, replace

import numpy as np

from . import stats
from .errors import LmmError, ModelError, PlsError
from .inference import FitResult, refit_ml, varcorr
from .optimize import optimize
from .pls import make_devfun

_DEV_SLACK = 1e-3  # re-optimization noise allowed below the global minimum


@dataclass
class ProfileParam:
    name: str
    scale: str        # sd | cor | sigma | beta
    estimate: float
    values: np.ndarray
    zeta: np.ndarray


@dataclass
class ProfileResult:
    params: list
    cutoff: float
    alpha_max: float

    def __getitem__(self, name: str) -> ProfileParam:
        for p in self.params:
            if p.name == name:
                return p
        raise KeyError(name)

    def names(self):
        return [p.name for p in self.params]

    def records(self):
        rows = []
        for p in self.params:
            for v, z in zip(p.values, p.zeta):
                rows.append({"parameter": p.name, "scale": p.scale,
                             "value": float(v), "zeta": float(z)})
        return rows


def _psd_chol(a: np.ndarray, tol: float = 1e-8):
    """Lower Cholesky factor tolerating semidefinite input; None if indefinite."""
    p = a.shape[0]
    L = np.zeros_like(a)
    scale = max(float(np.max(np.abs(np.diag(a)))), 1.0)
    for j in range(p):
        d = a[j, j] - L[j, :j] @ L[j, :j]
        if d < -tol * scale:
            return None
        L[j, j] = math.sqrt(max(d, 0.0))
        for i in range(j + 1, p):
            v = a[i, j] - L[i, :j] @ L[j, :j]
            if L[j, j] > 0:
                L[i, j] = v / L[j, j]
            elif abs(v) > tol * scale:
                return None
    return L


@dataclass
class _SdCorParam:
    name: str
    scale: str       # sd | cor | sigma
    index: int       # position in the sdcor+sigma vector
    lower: float
    upper: float


class _SdCorDeviance:
    """The fit's criterion over (per-term sds and correlations..., sigma)."""

    def __init__(self, fit: FitResult):
        self.state = fit.state.clone()
        spec = fit.spec
        if spec.terms is None:
            raise ModelError("profiling needs per-term metadata")
        self.terms = spec.terms
        self.m = spec.m
        params = []
        pos = 0
        for t in self.terms:
            for c in t.cnms:
                params.append(_SdCorParam(f"sd_{t.name}.{c}", "sd", pos,
                                          0.0, math.inf))
                pos += 1
            for i in range(t.p):
                for j in range(i + 1, t.p):
                    params.append(_SdCorParam(
                        f"cor_{t.name}.{t.cnms[i]}.{t.cnms[j]}", "cor", pos,
                        -1.0, 1.0))
                    pos += 1
        params.append(_SdCorParam("sigma", "sigma", pos, 0.0, math.inf))
        self.params = params
        self.size = pos + 1

    def theta_from(self, vec: np.ndarray):
        sigma = vec[-1]
        if sigma <= 0:
            return None
        theta = np.empty(self.m)
        off_v = 0
        off_t = 0
        for t in self.terms:
            p = t.p
            sds = vec[off_v:off_v + p]
            off_v += p
            npair = p * (p - 1) // 2
            cors = vec[off_v:off_v + npair]
            off_v += npair
            if np.any(sds < 0) or np.any(np.abs(cors) > 1):
                return None
            corr = np.eye(p)
            k = 0
            for i in range(p):
                for j in range(i + 1, p):
                    corr[i, j] = corr[j, i] = cors[k]
                    k += 1
            cov_rel = np.outer(sds, sds) * corr / sigma ** 2
            T = _psd_chol(cov_rel)
            if T is None:
                return None
            k = 0
            for j in range(p):
                theta[off_t + k:off_t + k + (p - j)] = T[j:, j]
                k += p - j
            off_t += t.m_i
        return theta

    def estimate_vector(self, fit: FitResult) -> np.ndarray:
        vc = varcorr(fit)
        vec = []
        for term in vc.terms:
            vec.extend(term.sd)
            p = len(term.names)
            for i in range(p):
                for j in range(i + 1, p):
                    vec.append(term.corr[i, j])
        vec.append(fit.sigma)
        return np.asarray(vec)

    def __call__(self, vec: np.ndarray) -> float:
        theta = self.theta_from(vec)
        if theta is None:
            return math.inf
        try:
            return self.state.evaluate_at_sigma(theta, vec[-1])
        except PlsError:
            return math.inf


def _branch(dev_at, phat, devmin, direction, phi, lo, hi, delta_zeta,
            max_points):
    """Walk one side of a profile, extrapolating the local zeta slope."""
    pts = []
    delta0 = 0.01 * abs(phat) if phat != 0 else 0.001
    prev_p, prev_z = phat, 0.0
    step = delta0
    last_step = delta0
    for _ in range(max_points):
        pnew = prev_p + direction * step
        clipped = False
        if pnew <= lo:
            pnew, clipped = lo, True
        elif pnew >= hi:
            pnew, clipped = hi, True
        if pnew == prev_p:
            break
        dev = dev_at(pnew)
        diff = dev - devmin
        if diff < -_DEV_SLACK:
            raise LmmError(
                f"profiled deviance {dev:.6f} fell below the fitted minimum "
                f"{devmin:.6f}; the original fit did not converge")
        z = direction * math.sqrt(max(diff, 0.0))
        pts.append((pnew, z))
        if abs(z) >= phi or clipped:
            break
        dz = abs(z - prev_z)
        dp = abs(pnew - prev_p)
        slope = dz / dp if dp > 0 else 0.0
        if slope <= 1e-8:
            step = 10.0 * last_step  # flat stretch; fail-safe growth
        else:
            step = delta_zeta / slope
        step = min(max(step, 0.1 * last_step), 10.0 * last_step)
        last_step = abs(pnew - prev_p)
        prev_p, prev_z = pnew, z
    return pts


def _profile_sdcor(devfun, est, devmin, k, phi, delta_zeta, max_points):
    par = devfun.params[k]
    warm = {"v": est.copy()}

    def dev_at(pval):
        fixed = warm["v"].copy()
        fixed[k] = pval
        free = [i for i in range(devfun.size) if i != k]
        if not free:
            return devfun(fixed)

        def inner(sub):
            full = fixed.copy()
            full[free] = sub
            return devfun(full)

        lo = np.array([devfun.params[i].lower for i in free])
        hi = np.array([devfun.params[i].upper for i in free])
        start = np.clip(fixed[free], lo, np.minimum(hi, 1e12))
        opt = optimize(inner, start, lo, upper=hi, ftol=1e-9, xtol=1e-8)
        warm["v"] = fixed.copy()
        warm["v"][free] = opt.theta
        return opt.fval

    phat = est[k]
    pts = [(phat, 0.0)]
    for direction in (1.0, -1.0):
        warm["v"] = est.copy()
        pts.extend(_branch(dev_at, phat, devmin, direction, phi,
                           par.lower, par.upper, delta_zeta, max_points))
    pts.sort()
    values = np.array([p for p, _ in pts])
    zeta = np.array([z for _, z in pts])
    return values, zeta


def _profile_beta(fit_ml, j, phi, delta_zeta, max_points):
    spec = fit_ml.spec
    xj = spec.X[:, j]
    reduced = replace(spec, X=np.delete(spec.X, j, axis=1),
                      x_names=[n for i, n in enumerate(spec.x_names) if i != j],
                      x_assign=[], reml=False)
    state = make_devfun(reduced, fit_ml.state.ordering)
    base_offset = spec.offset
    warm = {"theta": fit_ml.theta.copy()}

    def dev_at(v):
        state.set_response(spec.y, base_offset + v * xj)
        opt = optimize(state.evaluate, warm["theta"], spec.lower,
                       ftol=1e-9, xtol=1e-8)
        warm["theta"] = opt.theta
        return opt.fval

    phat = fit_ml.beta[j]
    devmin = fit_ml.criterion
    pts = [(phat, 0.0)]
    for direction in (1.0, -1.0):
        warm["theta"] = fit_ml.theta.copy()
        pts.extend(_branch(dev_at, phat, devmin, direction, phi,
                           -math.inf, math.inf, delta_zeta, max_points))
    pts.sort()
    return (np.array([p for p, _ in pts]), np.array([z for _, z in pts]))


def profile(fit: FitResult, which=None, alpha_max: float = 0.05,
            max_points: int = 30) -> ProfileResult:
    """Profile every (or the selected) parameter of a fit.

    Variance-component parameters and the residual scale are profiled
    against the criterion the model was fit with.  Fixed-effect
    coefficients are profiled against the exact ML deviance (offset
    construction), where zeta is identically zero at the estimate.
    """
    devfun = _SdCorDeviance(fit)
    n_total = devfun.size + fit.p
    phi = math.sqrt(stats.chi2_ppf(1.0 - alpha_max, n_total))
    delta_zeta = phi / 8.0
    est = devfun.estimate_vector(fit)
    devmin = fit.criterion
    # guard against stale minima before walking any branch
    dev0 = devfun(est)
    if dev0 < devmin - _DEV_SLACK:
        raise LmmError("deviance at the estimates fell below the reported "
                       "minimum; refit before profiling")

    out = []
    for k, par in enumerate(devfun.params):
        if which is not None and par.name not in which \
                and par.scale not in which:
            continue
        values, zeta = _profile_sdcor(devfun, est, devmin, k, phi,
                                      delta_zeta, max_points)
        out.append(ProfileParam(par.name, par.scale, est[k], values, zeta))
    want_beta = which is None or "beta" in which or \
        any(n in which for n in fit.spec.x_names)
    if want_beta and fit.p:
        fit_ml = refit_ml(fit)
        for j, name in enumerate(fit_ml.spec.x_names):
            if which is not None and name not in which \
                    and "beta" not in which:
                continue
            values, zeta = _profile_beta(fit_ml, j, phi, delta_zeta,
                                         max_points)
            out.append(ProfileParam(name, "beta", fit_ml.beta[j], values,
                                    zeta))
    return ProfileResult(out, phi, alpha_max)


# -- monotone interpolation and interval inversion ---------------------------

def _fc_slopes(x, y):
    h = np.diff(x)
    d = np.diff(y) / h
    n = len(x)
    m = np.empty(n)
    m[0], m[-1] = d[0], d[-1]
    for i in range(1, n - 1):
        if d[i - 1] * d[i] <= 0:
            m[i] = 0.0
        else:
            w1 = 2 * h[i] + h[i - 1]
            w2 = h[i] + 2 * h[i - 1]
            m[i] = (w1 + w2) / (w1 / d[i - 1] + w2 / d[i])
    return m


class MonotoneInterpolator:
    """Fritsch-Carlson cubic through (x, y); linear fallback if y is not
    strictly monotone (with a warning)."""

    def __init__(self, x, y):
        order = np.argsort(x)
        self.x = np.asarray(x)[order]
        self.y = np.asarray(y)[order]
        keep = np.concatenate([[True], np.diff(self.x) > 0])
        self.x, self.y = self.x[keep], self.y[keep]
        if np.all(np.diff(self.y) > 0):
            self.linear = False
            self.m = _fc_slopes(self.x, self.y)
        else:
            warnings.warn("profile trace is not monotone; falling back to "
                          "linear interpolation")
            self.linear = True

    def __call__(self, v):
        x, y = self.x, self.y
        if self.linear:
            return float(np.interp(v, x, y))
        i = int(np.clip(np.searchsorted(x, v) - 1, 0, len(x) - 2))
        h = x[i + 1] - x[i]
        t = (v - x[i]) / h
        h00 = (1 + 2 * t) * (1 - t) ** 2
        h10 = t * (1 - t) ** 2
        h01 = t * t * (3 - 2 * t)
        h11 = t * t * (t - 1)
        return float(h00 * y[i] + h10 * h * self.m[i] + h01 * y[i + 1]
                     + h11 * h * self.m[i + 1])

    def invert(self, target):
        """Solve f(x) = target; None when the target is outside the trace."""
        y = self.y
        if target < y[0] or target > y[-1]:
            return None
        lo, hi = self.x[0], self.x[-1]
        for _ in range(200):
            mid = 0.5 * (lo + hi)
            if self(mid) < target:
                lo = mid
            else:
                hi = mid
        return 0.5 * (lo + hi)


def profile_confint(prof: ProfileResult, level: float = 0.95) -> dict:
    """Invert each zeta trace at the normal quantiles; a branch that ends
    at a constraint reports the constrained endpoint."""
    z = stats.norm_ppf(0.5 + level / 2.0)
    out = {}
    for par in prof.params:
        interp = MonotoneInterpolator(par.values, par.zeta)
        lo = interp.invert(-z)
        hi = interp.invert(z)
        if lo is None:
            lo = float(par.values[0])
        if hi is None:
            hi = float(par.values[-1])
        out[par.name] = (lo, hi)
    return out
