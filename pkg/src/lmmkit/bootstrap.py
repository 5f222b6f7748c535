"""Parametric bootstrap: simulate from the fit, refit, collect parameters.

Replicate ``i`` always draws from the stream keyed by ``(seed, i)``, so the
result is identical for any worker count; workers only change who computes
which replicate.
"""

from __future__ import annotations

import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass

import numpy as np

from . import stats
from .errors import LmmError
from .inference import FitResult, finalize_fit, varcorr
from .optimize import OptResult, optimize
from .pls import make_devfun


@dataclass
class BootResult:
    nsim: int
    seed: int
    names: list
    draws: np.ndarray     # successful replicates x parameters
    failures: int

    def records(self):
        return [dict(zip(self.names, row)) for row in self.draws]


def param_names(fit: FitResult) -> list:
    names = []
    if fit.spec.terms is None:
        names.extend(f"theta_{i + 1}" for i in range(fit.spec.m))
    else:
        for t in fit.spec.terms:
            names.extend(f"sd_{t.name}.{c}" for c in t.cnms)
            for i in range(t.p):
                for j in range(i + 1, t.p):
                    names.append(f"cor_{t.name}.{t.cnms[i]}.{t.cnms[j]}")
    names.append("sigma")
    names.extend(fit.spec.x_names)
    return names


def param_values(fit: FitResult) -> np.ndarray:
    values = []
    if fit.spec.terms is None:
        values.extend(fit.theta)
    else:
        for term in varcorr(fit).terms:
            values.extend(term.sd)
            p = len(term.names)
            for i in range(p):
                for j in range(i + 1, p):
                    values.append(term.corr[i, j])
    values.append(fit.sigma)
    values.extend(fit.beta)
    return np.asarray(values, dtype=np.float64)


def _run_indices(fit: FitResult, seed: int, indices) -> list:
    from .inference import _simulate_column
    results = []
    for idx in indices:
        ystar = _simulate_column(fit, stats.replicate_rng(seed, idx),
                                 "newRE", 1.0)
        try:
            state = fit.state.clone()
            state.set_response(ystar)
            opt = optimize(state.evaluate, fit.theta, fit.spec.lower)
            new = finalize_fit(state, opt)
            results.append((idx, param_values(new)))
        except LmmError:
            results.append((idx, None))
    return results


def _worker(payload):
    spec, theta, fval, seed, indices = payload
    state = make_devfun(spec)
    opt = OptResult(np.asarray(theta), fval, 0, True,
                    np.zeros(len(theta), dtype=bool))
    fit = finalize_fit(state, opt)
    return _run_indices(fit, seed, indices)


def bootstrap(fit: FitResult, nsim: int, seed: int,
              workers: int = 1) -> BootResult:
    """Simulate/refit ``nsim`` replicates; failed refits are counted and
    skipped."""
    names = param_names(fit)
    if nsim <= 0:
        return BootResult(0, seed, names, np.empty((0, len(names))), 0)
    indices = list(range(nsim))
    if workers <= 1:
        results = _run_indices(fit, seed, indices)
    else:
        chunks = [indices[i::workers] for i in range(workers)]
        chunks = [c for c in chunks if c]
        payloads = [(fit.spec, fit.theta, fit.criterion, seed, chunk)
                    for chunk in chunks]
        results = []
        with ProcessPoolExecutor(max_workers=len(chunks)) as pool:
            for part in pool.map(_worker, payloads):
                results.extend(part)
    results.sort(key=lambda pair: pair[0])
    rows = [vals for _, vals in results if vals is not None]
    failures = sum(1 for _, vals in results if vals is None)
    draws = np.vstack(rows) if rows else np.empty((0, len(names)))
    return BootResult(nsim, seed, names, draws, failures)


def bootstrap_confint(boot: BootResult, level: float = 0.95) -> dict:
    """Percentile intervals from the bootstrap draws."""
    if boot.draws.shape[0] == 0:
        return {name: (math.nan, math.nan) for name in boot.names}
    alpha = (1.0 - level) / 2.0
    lo = np.quantile(boot.draws, alpha, axis=0)
    hi = np.quantile(boot.draws, 1.0 - alpha, axis=0)
    return {name: (float(lo[i]), float(hi[i]))
            for i, name in enumerate(boot.names)}
