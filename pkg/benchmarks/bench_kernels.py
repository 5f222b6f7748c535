"""Benchmark the compiled kernels against the pure-numpy fallback.

Times the hot path (full criterion evaluations: factor update, solves,
products) and a full model fit on synthetic data of several sizes.

Run:  python3 benchmarks/bench_kernels.py
"""

import time

import numpy as np

from lmmkit import kernels
from lmmkit.data import table_from_dict
from lmmkit.modelbuild import build_spec
from lmmkit.optimize import optimize
from lmmkit.pls import make_devfun


def synthetic(n_per, n_groups, slopes, seed=0):
    rng = np.random.default_rng(seed)
    n = n_per * n_groups
    g = [f"L{i % n_groups}" for i in range(n)]
    x = rng.standard_normal(n)
    eff = rng.standard_normal(n_groups)
    slope = 0.5 * rng.standard_normal(n_groups)
    gi = np.array([i % n_groups for i in range(n)])
    y = 1.0 + eff[gi] + (x * slope[gi] if slopes else 0.0) \
        + 0.8 * rng.standard_normal(n)
    data = table_from_dict({"y": y, "x": x, "g": g})
    formula = "y ~ x + (x|g)" if slopes else "y ~ x + (1|g)"
    return build_spec(formula, data)


def time_evaluations(spec, n_eval=200):
    state = make_devfun(spec)
    rng = np.random.default_rng(1)
    thetas = [np.maximum(spec.theta0 + 0.2 * rng.standard_normal(spec.m),
                         spec.lower + 0.01) for _ in range(n_eval)]
    state.evaluate(spec.theta0)  # warm up
    start = time.perf_counter()
    for theta in thetas:
        state.evaluate(theta)
    return (time.perf_counter() - start) / n_eval


def time_fit(spec):
    state = make_devfun(spec)
    start = time.perf_counter()
    optimize(state.evaluate, spec.theta0, spec.lower)
    return time.perf_counter() - start


def main():
    cases = [
        ("intercepts, q=20", synthetic(30, 20, slopes=False)),
        ("slopes,     q=40", synthetic(10, 20, slopes=True)),
        ("slopes,     q=200", synthetic(20, 100, slopes=True)),
        ("intercepts, q=500", synthetic(10, 500, slopes=False)),
    ]
    names = kernels.available_backends()
    print(f"kernel backends available: {names}")
    header = f"{'model':<22}" + "".join(f"{n + ' eval':>16}" for n in names) \
        + "".join(f"{n + ' fit':>16}" for n in names)
    print(header)
    print("-" * len(header))
    for label, spec in cases:
        evals, fits = {}, {}
        for name in names:
            kernels.use_backend(name)
            evals[name] = time_evaluations(spec)
            fits[name] = time_fit(spec)
        row = f"{label:<22}"
        row += "".join(f"{evals[n] * 1e3:>13.3f} ms" for n in names)
        row += "".join(f"{fits[n]:>14.3f} s" for n in names)
        print(row)
    if "compiled" in names:
        kernels.use_backend("compiled")
    print("\n(eval = one criterion evaluation: factor update + solves; "
          "fit = full optimization)")


if __name__ == "__main__":
    main()
