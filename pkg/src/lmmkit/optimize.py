"""Box-constrained Nelder-Mead minimization of the profiled criterion."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import LmmError, PlsError

_REFLECT, _EXPAND, _CONTRACT, _SHRINK = 1.0, 2.0, 0.5, 0.5


@dataclass
class OptResult:
    theta: np.ndarray
    fval: float
    n_eval: int
    converged: bool
    boundary: np.ndarray  # mask of components sitting at their lower bound
    message: str = ""


def _clamp(x, lower, upper):
    return np.minimum(np.maximum(x, lower), upper)


class _Objective:
    """Clamping, failure-tolerant wrapper around the raw criterion."""

    def __init__(self, fn, lower, upper, max_eval):
        self.fn = fn
        self.lower = lower
        self.upper = upper
        self.max_eval = max_eval
        self.n_eval = 0
        self.first = True

    def __call__(self, x):
        x = _clamp(x, self.lower, self.upper)
        assert np.all(x >= self.lower)
        self.n_eval += 1
        try:
            f = self.fn(x)
        except PlsError:
            if self.first:
                raise LmmError("criterion evaluation failed at the starting "
                               "point; check model scaling") from None
            return x, math.inf
        finally:
            self.first = False
        if not np.isfinite(f):
            f = math.inf
        return x, f


def _initial_simplex(theta0, lower, upper, edge_scale=0.1):
    pts = [theta0]
    for i in range(len(theta0)):
        edge = edge_scale * max(1.0, abs(theta0[i]))
        trial = theta0.copy()
        if upper[i] != math.inf and theta0[i] + edge > upper[i]:
            trial[i] -= edge  # reflect the edge inside the box
        else:
            trial[i] += edge
        pts.append(_clamp(trial, lower, upper))
    return pts


def _nelder_mead(obj, theta0, lower, upper, ftol, xtol, edge_scale=0.1):
    points = _initial_simplex(theta0, lower, upper, edge_scale)
    simplex = []
    for pt in points:
        x, f = obj(pt)
        simplex.append((f, x))
    nparam = len(theta0)
    if nparam == 0:
        return simplex[0][1], simplex[0][0], True
    while obj.n_eval < obj.max_eval:
        simplex.sort(key=lambda t: t[0])
        fbest = simplex[0][0]
        fworst = simplex[-1][0]
        xspread = max(np.max(np.abs(s[1] - simplex[0][1])) for s in simplex)
        if (fworst - fbest) < ftol * (1.0 + abs(fbest)) and xspread < xtol:
            return simplex[0][1], fbest, True
        centroid = np.mean([s[1] for s in simplex[:-1]], axis=0)
        worst = simplex[-1]
        xr, fr = obj(centroid + _REFLECT * (centroid - worst[1]))
        if fr < simplex[0][0]:
            xe, fe = obj(centroid + _EXPAND * (centroid - worst[1]))
            simplex[-1] = (fe, xe) if fe < fr else (fr, xr)
        elif fr < simplex[-2][0]:
            simplex[-1] = (fr, xr)
        else:
            if fr < worst[0]:  # outside contraction
                xc, fc = obj(centroid + _CONTRACT * (xr - centroid))
                accepted = (fc, xc) if fc <= fr else (fr, xr)
            else:              # inside contraction
                xc, fc = obj(centroid - _CONTRACT * (centroid - worst[1]))
                accepted = (fc, xc) if fc < worst[0] else None
            if accepted is not None:
                simplex[-1] = accepted
            else:
                best = simplex[0][1]
                new = [simplex[0]]
                for _, x in simplex[1:]:
                    xs, fs = obj(best + _SHRINK * (x - best))
                    new.append((fs, xs))
                simplex = new
    simplex.sort(key=lambda t: t[0])
    return simplex[0][1], simplex[0][0], False


def optimize(evaluate, theta0, lower, upper=None, ftol: float = 1e-8,
             xtol: float = 1e-7, max_eval: int = 10_000,
             restarts: int = 1) -> OptResult:
    """Minimize ``evaluate`` over the box ``theta >= lower`` (Nelder-Mead).

    Trial points are projected onto the box; evaluation failures after the
    first point count as +inf.  One restart from the incumbent with a wide
    fresh simplex guards against premature collapse and shallow local
    minima.
    """
    theta0 = np.asarray(theta0, dtype=np.float64)
    lower = np.asarray(lower, dtype=np.float64)
    if upper is None:
        upper = np.full_like(theta0, math.inf)
    else:
        upper = np.asarray(upper, dtype=np.float64)
    if np.any(theta0 < lower) or np.any(theta0 > upper):
        raise LmmError("starting point violates the bounds")
    obj = _Objective(evaluate, lower, upper, max_eval)
    best_x, best_f, converged = _nelder_mead(obj, theta0, lower, upper,
                                             ftol, xtol)
    for _ in range(restarts):
        x2, f2, conv2 = _nelder_mead(obj, best_x.copy(), lower, upper,
                                     ftol, xtol, edge_scale=2.0)
        if f2 < best_f:
            best_x, best_f = x2, f2
        converged = converged and conv2
    with np.errstate(invalid="ignore"):
        boundary = np.isfinite(lower) & (
            np.abs(best_x - lower) <= 1e-9 * np.maximum(1.0, np.abs(best_x)))
    return OptResult(best_x, best_f, obj.n_eval, converged, boundary)


@dataclass
class ConvergenceReport:
    ok: bool
    probes: list = field(default_factory=list)  # (index, step, improvement)


def check_convergence(result: OptResult, evaluate,
                      delta: float = 1e-4, min_gain: float = 1e-6,
                      lower=None) -> ConvergenceReport:
    """Coordinate probes around the optimum; flags any improving direction."""
    theta = result.theta
    if lower is None:
        lower = np.full_like(theta, -math.inf)
    probes = []
    for i in range(len(theta)):
        step = delta * max(1.0, abs(theta[i]))
        for sign in (+1.0, -1.0):
            trial = theta.copy()
            trial[i] += sign * step
            if trial[i] < lower[i]:
                continue  # one-sided probe at the boundary
            try:
                f = evaluate(trial)
            except PlsError:
                continue
            if result.fval - f > min_gain:
                probes.append((i, sign * step, result.fval - f))
    return ConvergenceReport(not probes, probes)
