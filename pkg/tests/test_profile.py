import numpy as np
import pytest

from lmmkit import confint, fit, fit_spec, profile, profile_confint
from lmmkit.data import table_from_dict
from lmmkit.modelbuild import build_spec
from lmmkit.profile import MonotoneInterpolator, _psd_chol


@pytest.fixture(scope="module")
def balanced_fit():
    rng = np.random.default_rng(14)
    nlev, per = 12, 5
    n = nlev * per
    g = [f"L{i // per}" for i in range(n)]
    x = np.tile(np.linspace(-1, 1, per), nlev)
    eff = 1.2 * rng.standard_normal(nlev)
    y = 2.0 + 0.7 * x + np.repeat(eff, per) + 0.5 * rng.standard_normal(n)
    data = table_from_dict({"y": y, "x": x, "g": g})
    return fit_spec(build_spec("y ~ x + (1|g)", data))


@pytest.fixture(scope="module")
def balanced_profile(balanced_fit):
    return profile(balanced_fit)


class TestTraces:
    def test_zeta_zero_at_estimates(self, balanced_profile):
        for par in balanced_profile.params:
            at = np.argmin(np.abs(par.values - par.estimate))
            assert par.zeta[at] == pytest.approx(0.0, abs=1e-6)

    def test_traces_monotone(self, balanced_profile):
        for par in balanced_profile.params:
            assert np.all(np.diff(par.zeta) > -1e-8), par.name

    def test_scales_present(self, balanced_profile):
        scales = {p.scale for p in balanced_profile.params}
        assert scales == {"sd", "sigma", "beta"}

    def test_beta_profile_linear_in_balanced_design(self):
        # large balanced design: the slope trace is linear to 1e-3
        rng = np.random.default_rng(3)
        nlev, per = 100, 60
        n = nlev * per
        g = [f"L{i // per}" for i in range(n)]
        x = np.tile(np.linspace(-1, 1, per), nlev)
        eff = 0.8 * rng.standard_normal(nlev)
        y = 2.0 + 0.7 * x + np.repeat(eff, per) + 0.5 * rng.standard_normal(n)
        data = table_from_dict({"y": y, "x": x, "g": g})
        res = fit_spec(build_spec("y ~ x + (1|g)", data))
        par = profile(res, which=["x"])["x"]
        slope, intercept = np.polyfit(par.values, par.zeta, 1)
        pred = slope * par.values + intercept
        assert np.max(np.abs(par.zeta - pred)) < 1e-3

    def test_records_schema(self, balanced_profile):
        rows = balanced_profile.records()
        assert set(rows[0]) == {"parameter", "scale", "value", "zeta"}


class TestIntervals:
    def test_wald_profile_agreement_on_balanced_beta(self, balanced_fit,
                                                     balanced_profile):
        wald = confint(balanced_fit, "wald")
        prof = profile_confint(balanced_profile)
        for name in ("x",):
            w_lo, w_hi = wald[name]
            p_lo, p_hi = prof[name]
            w_width = w_hi - w_lo
            assert abs(p_lo - w_lo) < 0.05 * w_width
            assert abs(p_hi - w_hi) < 0.05 * w_width

    def test_wald_inside_profile_neighborhood_sleepstudy(self, sleep_fit):
        prof = profile(sleep_fit, which=["Days"])
        wald = confint(sleep_fit, "wald")["Days"]
        prof_ci = profile_confint(prof)["Days"]
        w_width = wald[1] - wald[0]
        p_width = prof_ci[1] - prof_ci[0]
        assert abs(p_width - w_width) / p_width < 0.15
        assert prof_ci[0] - 0.5 < wald[0] and wald[1] < prof_ci[1] + 0.5

    def test_singular_sd_profile_starts_at_zero(self):
        rng = np.random.default_rng(2)
        n = 60
        x = rng.standard_normal(n)
        y = 2.0 + 0.5 * x + 0.3 * rng.standard_normal(n)
        data = table_from_dict({"y": y, "x": x,
                                "g": [f"L{i % 6}" for i in range(n)]})
        res = fit_spec(build_spec("y ~ x + (1|g)", data))
        assert res.theta[0] == 0.0
        prof = profile(res, which=["sd"])
        par = prof.params[0]
        assert par.estimate == pytest.approx(0.0, abs=1e-10)
        assert par.values.min() >= 0.0
        lo, hi = profile_confint(prof)[par.name]
        assert lo == pytest.approx(0.0, abs=1e-8)
        assert hi > 0.0


class TestMultiTerm:
    def test_two_term_profile_indexing(self):
        rng = np.random.default_rng(30)
        n = 72
        g1 = [f"a{i % 6}" for i in range(n)]
        g2 = [f"b{i % 4}" for i in range(n)]
        eff1 = 1.0 * rng.standard_normal(6)
        eff2 = 0.6 * rng.standard_normal(4)
        y = (1.0 + eff1[[i % 6 for i in range(n)]]
             + eff2[[i % 4 for i in range(n)]]
             + 0.5 * rng.standard_normal(n))
        data = table_from_dict({"y": y, "g1": g1, "g2": g2})
        res = fit_spec(build_spec("y ~ (1|g1) + (1|g2)", data))
        prof = profile(res, which=["sd", "sigma"])
        assert [p.name for p in prof.params] == [
            "sd_g1.(Intercept)", "sd_g2.(Intercept)", "sigma"]
        for par in prof.params:
            at = np.argmin(np.abs(par.values - par.estimate))
            assert par.zeta[at] == pytest.approx(0.0, abs=1e-5)
            assert np.all(np.diff(par.zeta) > -1e-8)


class TestErrorPaths:
    def test_deviance_below_minimum_is_hard_error(self, balanced_fit):
        from dataclasses import replace

        from lmmkit.errors import LmmError

        # a fit whose recorded criterion overstates the true minimum makes
        # every re-optimization fall below it; the profiler must stop
        broken = replace(balanced_fit, criterion=balanced_fit.criterion + 5.0)
        with pytest.raises(LmmError, match="below"):
            profile(broken, which=["sigma"])


class TestInterpolator:
    def test_monotone_cubic_matches_knots(self):
        x = np.array([0.0, 1.0, 2.0, 4.0])
        y = np.array([-2.0, -0.5, 0.4, 3.0])
        interp = MonotoneInterpolator(x, y)
        assert not interp.linear
        for xi, yi in zip(x, y):
            assert interp(xi) == pytest.approx(yi, abs=1e-12)
        inv = interp.invert(0.0)
        assert interp(inv) == pytest.approx(0.0, abs=1e-9)

    def test_monotone_between_knots(self):
        x = np.linspace(0, 1, 7)
        y = np.array([0.0, 0.1, 0.15, 0.7, 0.71, 0.9, 1.0])
        interp = MonotoneInterpolator(x, y)
        grid = np.linspace(0, 1, 400)
        vals = [interp(v) for v in grid]
        assert np.all(np.diff(vals) >= -1e-12)

    def test_nonmonotone_falls_back_linear_with_warning(self):
        x = np.array([0.0, 1.0, 2.0])
        y = np.array([0.0, 1.0, 0.5])
        with pytest.warns(UserWarning, match="linear"):
            interp = MonotoneInterpolator(x, y)
        assert interp.linear

    def test_invert_outside_range(self):
        interp = MonotoneInterpolator(np.array([0.0, 1.0]),
                                      np.array([0.0, 1.0]))
        assert interp.invert(2.0) is None


class TestPsdChol:
    def test_spd(self):
        a = np.array([[2.0, 0.3], [0.3, 1.0]])
        L = _psd_chol(a)
        assert np.allclose(L @ L.T, a)

    def test_singular_corr_one(self):
        a = np.array([[1.0, 1.0], [1.0, 1.0]])
        L = _psd_chol(a)
        assert L is not None
        assert np.allclose(L @ L.T, a, atol=1e-12)

    def test_indefinite_rejected(self):
        a = np.array([[1.0, 2.0], [2.0, 1.0]])
        assert _psd_chol(a) is None
