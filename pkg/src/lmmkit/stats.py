"""Scalar distribution helpers: normal and chi-square quantiles, tail areas.

Implemented from scratch on top of ``math.erfc`` and an incomplete-gamma
evaluation (series + Lentz continued fraction), refined by Newton steps so
quantiles are accurate to well below 1e-8 absolute error.
"""

import math

import numpy as np

_SQRT2 = math.sqrt(2.0)

# Acklam's rational approximation coefficients for the normal quantile.
_A = (-3.969683028665376e+01, 2.209460984245205e+02, -2.759285104469687e+02,
      1.383577518672690e+02, -3.066479806614716e+01, 2.506628277459239e+00)
_B = (-5.447609879822406e+01, 1.615858368580409e+02, -1.556989798598866e+02,
      6.680131188771972e+01, -1.328068155288572e+01)
_C = (-7.784894002430293e-03, -3.223964580411365e-01, -2.400758277161838e+00,
      -2.549732539343734e+00, 4.374664141464968e+00, 2.938163982698783e+00)
_D = (7.784695709041462e-03, 3.224671290700398e-01, 2.445134137142996e+00,
      3.754408661907416e+00)


def norm_cdf(x: float) -> float:
    return 0.5 * math.erfc(-x / _SQRT2)


def norm_pdf(x: float) -> float:
    return math.exp(-0.5 * x * x) / math.sqrt(2.0 * math.pi)


def norm_ppf(p: float) -> float:
    """Standard normal quantile."""
    if not 0.0 < p < 1.0:
        if p == 0.0:
            return -math.inf
        if p == 1.0:
            return math.inf
        raise ValueError(f"p must be in [0, 1], got {p}")
    # Rational initial guess (Acklam), then two Halley refinements.
    plow, phigh = 0.02425, 1 - 0.02425
    if p < plow:
        q = math.sqrt(-2 * math.log(p))
        x = ((((((_C[0] * q + _C[1]) * q + _C[2]) * q + _C[3]) * q + _C[4]) * q + _C[5])
             / ((((_D[0] * q + _D[1]) * q + _D[2]) * q + _D[3]) * q + 1))
    elif p <= phigh:
        q = p - 0.5
        r = q * q
        x = ((((((_A[0] * r + _A[1]) * r + _A[2]) * r + _A[3]) * r + _A[4]) * r + _A[5]) * q
             / (((((_B[0] * r + _B[1]) * r + _B[2]) * r + _B[3]) * r + _B[4]) * r + 1))
    else:
        q = math.sqrt(-2 * math.log1p(-p))
        x = -((((((_C[0] * q + _C[1]) * q + _C[2]) * q + _C[3]) * q + _C[4]) * q + _C[5])
              / ((((_D[0] * q + _D[1]) * q + _D[2]) * q + _D[3]) * q + 1))
    for _ in range(2):
        e = norm_cdf(x) - p
        u = e / max(norm_pdf(x), 1e-300)
        x = x - u / (1 + x * u / 2)
    return x


def _gamma_p(a: float, x: float) -> float:
    """Regularized lower incomplete gamma P(a, x)."""
    if x < 0 or a <= 0:
        raise ValueError("gamma_p requires x >= 0, a > 0")
    if x == 0:
        return 0.0
    if x < a + 1.0:
        # series expansion
        term = 1.0 / a
        total = term
        n = a
        for _ in range(1000):
            n += 1.0
            term *= x / n
            total += term
            if abs(term) < abs(total) * 1e-16:
                break
        return total * math.exp(-x + a * math.log(x) - math.lgamma(a))
    return 1.0 - _gamma_q_cf(a, x)


def _gamma_q_cf(a: float, x: float) -> float:
    """Regularized upper incomplete gamma Q(a, x) by Lentz's continued fraction."""
    tiny = 1e-300
    b = x + 1.0 - a
    c = 1.0 / tiny
    d = 1.0 / b
    h = d
    for i in range(1, 1000):
        an = -i * (i - a)
        b += 2.0
        d = an * d + b
        if abs(d) < tiny:
            d = tiny
        c = b + an / c
        if abs(c) < tiny:
            c = tiny
        d = 1.0 / d
        delta = d * c
        h *= delta
        if abs(delta - 1.0) < 1e-16:
            break
    return h * math.exp(-x + a * math.log(x) - math.lgamma(a))


def chi2_cdf(x: float, df: float) -> float:
    if x <= 0:
        return 0.0
    return _gamma_p(df / 2.0, x / 2.0)


def chi2_sf(x: float, df: float) -> float:
    """Upper tail probability of the chi-square distribution."""
    if x <= 0:
        return 1.0
    a = df / 2.0
    if x / 2.0 < a + 1.0:
        return 1.0 - _gamma_p(a, x / 2.0)
    return _gamma_q_cf(a, x / 2.0)


def chi2_ppf(p: float, df: float) -> float:
    """Chi-square quantile via Newton iteration on the regularized gamma."""
    if not 0.0 <= p < 1.0:
        raise ValueError(f"p must be in [0, 1), got {p}")
    if p == 0.0:
        return 0.0
    a = df / 2.0
    # Wilson-Hilferty starting value
    z = norm_ppf(p)
    x = df * (1.0 - 2.0 / (9.0 * df) + z * math.sqrt(2.0 / (9.0 * df))) ** 3
    if x <= 0:
        x = 0.5 * df * (p ** (1.0 / a))
    loggam = math.lgamma(a)
    for _ in range(100):
        f = chi2_cdf(x, df) - p
        # density of chi-square at x
        logpdf = (a - 1.0) * math.log(x / 2.0) - x / 2.0 - loggam - math.log(2.0)
        pdf = math.exp(logpdf)
        if pdf <= 0:
            break
        step = f / pdf
        xnew = x - step
        if xnew <= 0:
            xnew = x / 2.0
        if abs(xnew - x) < 1e-12 * (1.0 + abs(x)):
            x = xnew
            break
        x = xnew
    return x


def replicate_rng(seed: int, index: int) -> np.random.Generator:
    """Independent, reproducible stream for replicate ``index`` of run ``seed``.

    Streams depend only on (seed, index), never on worker scheduling.
    """
    return np.random.Generator(np.random.Philox(np.random.SeedSequence([seed, index])))
