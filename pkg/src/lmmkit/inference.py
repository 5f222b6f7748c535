"""Output stage: package an optimized fit and derive every downstream
quantity (variance components, standard errors, conditional modes and
variances, ANOVA, hat-matrix diagnostics, simulation, prediction, refits).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

from . import stats
from .data import DataTable, FactorColumn, NumericColumn
from .errors import DataError, ModelError
from .formula import print_formula
from .modelbuild import ModelSpec, _as_factor, _build_matrix, build_spec
from .optimize import OptResult, optimize
from .pls import DevState, make_devfun
from .sparse import spmv

_LOG2PI = math.log(2.0 * math.pi)


@dataclass
class FitResult:
    """A converged fit with cached factorizations, ready for inference."""

    spec: ModelSpec
    state: DevState           # frozen at theta-hat; clone before reusing
    opt: OptResult
    theta: np.ndarray
    beta: np.ndarray
    u: np.ndarray
    b: np.ndarray
    mu: np.ndarray
    wtres: np.ndarray
    pwrss: float
    sigma2: float
    criterion: float
    reml: bool

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
    def df(self) -> int:
        return self.spec.p + self.spec.m + 1

    @property
    def sigma(self) -> float:
        return math.sqrt(self.sigma2)

    @property
    def logLik(self) -> float:
        return -0.5 * self.criterion

    def formula_string(self) -> str:
        return print_formula(self.spec.formula, compact=True)


def finalize_fit(state: DevState, opt: OptResult,
                 spec: ModelSpec | None = None) -> FitResult:
    """One final evaluation at the optimum; snapshot everything."""
    if spec is None:
        spec = state.spec
    else:
        state.spec = spec  # keep the state's view consistent after refits
    crit = state.evaluate(opt.theta)
    return FitResult(
        spec=spec, state=state, opt=opt,
        theta=opt.theta.copy(), beta=state.beta.copy(),
        u=state.u.copy(), b=state.b.copy(), mu=state.mu.copy(),
        wtres=state.wtres.copy(), pwrss=state.pwrss,
        sigma2=state.pwrss / state.deg_free, criterion=crit,
        reml=state.reml)


def fit(formula: str, data: DataTable, reml: bool = True,
        weights_col: str | None = None, offset_col: str | None = None,
        ordering: str = "natural", ftol: float = 1e-8, xtol: float = 1e-7,
        max_eval: int = 10_000, single_level: str = "error") -> FitResult:
    """Parse, build, optimize, and package in one call."""
    spec = build_spec(formula, data, reml=reml, weights_col=weights_col,
                      offset_col=offset_col, single_level=single_level)
    return fit_spec(spec, ordering=ordering, ftol=ftol, xtol=xtol,
                    max_eval=max_eval)


def fit_spec(spec: ModelSpec, ordering: str = "natural", ftol: float = 1e-8,
             xtol: float = 1e-7, max_eval: int = 10_000) -> FitResult:
    state = make_devfun(spec, ordering)
    opt = optimize(state.evaluate, spec.theta0, spec.lower, ftol=ftol,
                   xtol=xtol, max_eval=max_eval)
    return finalize_fit(state, opt)


# -- variance components -------------------------------------------------

@dataclass
class VarCorrTerm:
    grp: str
    names: list
    cov: np.ndarray    # sigma^2 * T T'
    sd: np.ndarray
    corr: np.ndarray


@dataclass
class VarCorr:
    terms: list
    residual_sd: float

    def flat_records(self):
        """Rows of {grp, var1, var2, vcov, sdcor}: variances then pairs."""
        rows = []
        for t in self.terms:
            for i, name in enumerate(t.names):
                rows.append({"grp": t.grp, "var1": name, "var2": None,
                             "vcov": t.cov[i, i], "sdcor": t.sd[i]})
            for i in range(len(t.names)):
                for j in range(i + 1, len(t.names)):
                    rows.append({"grp": t.grp, "var1": t.names[i],
                                 "var2": t.names[j], "vcov": t.cov[i, j],
                                 "sdcor": t.corr[i, j]})
        rows.append({"grp": "Residual", "var1": None, "var2": None,
                     "vcov": self.residual_sd ** 2,
                     "sdcor": self.residual_sd})
        return rows


def _term_templates(fit: FitResult):
    """Template matrices T_i recovered from Lambda' at theta-hat."""
    spec = fit.spec
    if spec.terms is None:
        raise ModelError("per-term reports are unavailable for custom "
                         "injected structures")
    lam = spec.Lambdat.copy()
    lam.values = fit.theta[spec.Lind - 1]
    out = []
    offset = 0
    for term in spec.terms:
        p = term.p
        block = np.zeros((p, p))
        for j in range(offset, offset + p):
            rows, vals = lam.col(j)
            local = (rows >= offset) & (rows < offset + p)
            block[rows[local] - offset, j - offset] = vals[local]
        out.append(block.T)  # stored transposed; T_i is lower triangular
        offset += term.q_i
    return out


def varcorr(fit: FitResult) -> VarCorr:
    templates = _term_templates(fit)
    out = []
    for term, T in zip(fit.spec.terms, templates):
        cov = fit.sigma2 * (T @ T.T)
        sd = np.sqrt(np.diag(cov))
        denom = np.outer(sd, sd)
        with np.errstate(invalid="ignore", divide="ignore"):
            corr = np.where(denom > 0, cov / denom, 0.0)
        np.fill_diagonal(corr, 1.0)
        out.append(VarCorrTerm(term.name, list(term.cnms), cov, sd, corr))
    return VarCorr(out, fit.sigma)


# -- fixed effects ---------------------------------------------------------

def vcov_fixef(fit: FitResult) -> np.ndarray:
    if fit.p == 0:
        return np.zeros((0, 0))
    return fit.sigma2 * np.linalg.inv(fit.state.RXtRX)


def se_fixef(fit: FitResult) -> np.ndarray:
    return np.sqrt(np.diag(vcov_fixef(fit)))


def tvalues_fixef(fit: FitResult) -> np.ndarray:
    return fit.beta / se_fixef(fit)


def corr_fixef(fit: FitResult) -> np.ndarray:
    v = vcov_fixef(fit)
    sd = np.sqrt(np.diag(v))
    return v / np.outer(sd, sd)


# -- random effects --------------------------------------------------------

def ranef(fit: FitResult) -> dict:
    """Conditional modes b-hat reshaped per term as (level x coefficient)."""
    spec = fit.spec
    if spec.terms is None:
        raise ModelError("per-term reports are unavailable for custom "
                         "injected structures")
    out = {}
    offset = 0
    for term in spec.terms:
        block = fit.b[offset:offset + term.q_i].reshape(term.nlev, term.p)
        out[term.name] = {"levels": list(term.levels),
                          "cnms": list(term.cnms),
                          "values": block.copy()}
        offset += term.q_i
    return out


def cond_var_ranef(fit: FitResult) -> dict:
    """Per-level conditional covariance blocks of b given the data.

    Solved through the sparse factor (never forming a dense inverse).
    """
    spec = fit.spec
    if spec.terms is None:
        raise ModelError("per-term reports are unavailable for custom "
                         "injected structures")
    fac = fit.state.factor
    lam = fit.state.lambdat
    out = {}
    offset = 0
    for term in spec.terms:
        blocks = []
        for lev in range(term.nlev):
            cols = np.arange(offset + lev * term.p,
                             offset + (lev + 1) * term.p)
            dense = np.zeros((fit.q, term.p))
            for local, j in enumerate(cols):
                rows, vals = lam.col(j)
                dense[rows, local] = vals
            cl = fac.solve(fac.solve(dense, "P"), "L")
            blocks.append(fit.sigma2 * (cl.T @ cl))
        out[term.name] = blocks
        offset += term.q_i
    return out


# -- basic extractors ------------------------------------------------------

def fitted(fit: FitResult) -> np.ndarray:
    return fit.mu.copy()


def residuals(fit: FitResult, kind: str = "response") -> np.ndarray:
    if kind == "response":
        return fit.spec.y - fit.mu
    if kind == "pearson-scaled":
        return fit.wtres / fit.sigma
    raise ModelError(f"unknown residual kind {kind!r}")


def deviance(fit: FitResult) -> float:
    return fit.criterion


def aic(fit: FitResult) -> float:
    return -2.0 * fit.logLik + 2.0 * fit.df


def bic(fit: FitResult) -> float:
    return -2.0 * fit.logLik + fit.df * math.log(fit.n)


# -- sequential ANOVA and model comparison ---------------------------------

def anova_seq(fit: FitResult):
    """Per-fixed-term decomposition {term, df, sum_sq, mean_sq, f_value}."""
    if fit.p == 0:
        return []
    r_x = fit.state.RX_chol.T  # upper-triangular factor of X'WX - RZX'RZX
    rows = []
    for label, idx in fit.spec.x_assign:
        if label == "(Intercept)":
            continue
        ri = r_x[idx, :]
        ss = float(np.sum((ri @ fit.beta) ** 2))
        df = len(idx)
        rows.append({"term": label, "df": df, "sum_sq": ss,
                     "mean_sq": ss / df,
                     "f_value": ss / (fit.sigma2 * df)})
    return rows


def refit(fit: FitResult, newy) -> FitResult:
    """Refit to a new response, reusing all symbolic structure."""
    newy = np.asarray(newy, dtype=np.float64)
    state = fit.state.clone()
    state.set_response(newy)
    opt = optimize(state.evaluate, fit.theta, fit.spec.lower)
    spec = replace(fit.spec, y=newy.copy())
    return finalize_fit(state, opt, spec)


def refit_ml(fit: FitResult) -> FitResult:
    if not fit.reml:
        return fit
    state = fit.state.clone(reml=False)
    opt = optimize(state.evaluate, fit.theta, fit.spec.lower)
    spec = replace(fit.spec, reml=False)
    return finalize_fit(state, opt, spec)


def update_formula(fit: FitResult, new_formula: str,
                   data: DataTable) -> FitResult:
    """Re-parse and fully rebuild with a new formula."""
    return fit_spec(build_spec(new_formula, data, reml=fit.reml,
                               weights_col=fit.spec.weights_col,
                               offset_col=fit.spec.offset_col))


def anova_compare(fits) -> list:
    """Likelihood-ratio comparison table; REML fits are refit with ML."""
    if len(fits) < 2:
        raise ModelError("model comparison needs at least two fits")
    n0 = fits[0].n
    y0 = fits[0].spec.y
    for f in fits[1:]:
        if f.n != n0 or not np.allclose(f.spec.y, y0):
            raise ModelError("all models must be fit to the same response")
    ml_fits = [refit_ml(f) for f in fits]
    ml_fits.sort(key=lambda f: f.df)
    rows = []
    prev = None
    for f in ml_fits:
        row = {"formula": f.formula_string(), "df": f.df, "aic": aic(f),
               "bic": bic(f), "loglik": f.logLik, "deviance": f.criterion,
               "chisq": None, "chi_df": None, "p_value": None}
        if prev is not None:
            chisq = max(prev.criterion - f.criterion, 0.0)
            chi_df = f.df - prev.df
            row["chisq"] = chisq
            row["chi_df"] = chi_df
            row["p_value"] = (stats.chi2_sf(chisq, chi_df)
                              if chi_df > 0 else math.nan)
        rows.append(row)
        prev = f
    return rows


# -- hat matrix -------------------------------------------------------------

def _hat_blocks(fit: FitResult):
    fac = fit.state.factor
    m_dense = fit.state.M.to_dense()          # Lambda' Z' W^{1/2}
    cl = fac.solve(fac.solve(m_dense, "P"), "L")
    if fit.p:
        rhs = (fit.spec.X * fit.spec.sqrtW[:, None]).T - fit.state.RZX.T @ cl
        cr = np.linalg.solve(fit.state.RX_chol, rhs)
    else:
        cr = np.zeros((0, fit.n))
    return cl, cr


def hat_trace(fit: FitResult) -> float:
    cl, cr = _hat_blocks(fit)
    return float(np.sum(cl * cl) + np.sum(cr * cr))


def hat_diag(fit: FitResult) -> np.ndarray:
    cl, cr = _hat_blocks(fit)
    return np.sum(cl * cl, axis=0) + np.sum(cr * cr, axis=0)


# -- simulation and prediction ----------------------------------------------

def simulate(fit: FitResult, nsim: int, seed: int,
             conditional: str = "newRE", sigma_scale: float = 1.0) -> np.ndarray:
    """Draws from the fitted model, one column per replicate.

    ``conditional`` picks the random-effects treatment: fresh spherical
    draws ("newRE"), the fitted conditional modes ("useU"), or none
    ("population").
    """
    if conditional not in ("newRE", "useU", "population"):
        raise ModelError(f"unknown simulation mode {conditional!r}")
    out = np.empty((fit.n, nsim))
    for j in range(nsim):
        out[:, j] = _simulate_column(fit, stats.replicate_rng(seed, j),
                                     conditional, sigma_scale)
    return out


def _simulate_column(fit: FitResult, rng, conditional: str,
                     sigma_scale: float) -> np.ndarray:
    n, q = fit.n, fit.q
    base = fit.spec.offset.copy()
    if fit.p:
        base = base + fit.spec.X @ fit.beta
    sig = fit.sigma * sigma_scale
    if conditional == "newRE":
        ustar = sig * rng.standard_normal(q)
    elif conditional == "useU":
        ustar = fit.u * sigma_scale
    else:
        ustar = np.zeros(q)
    eps = sig * rng.standard_normal(n) / np.sqrt(fit.spec.weights)
    lam = fit.state.lambdat
    bstar = np.empty(q)
    for k in range(q):
        rows, vals = lam.col(k)
        bstar[k] = vals @ ustar[rows] if len(rows) else 0.0
    return base + spmv(fit.state.Z, bstar) + eps


def _newdata_frame(fit: FitResult, newdata: DataTable,
                   strict_groups: bool = True) -> DataTable:
    """Align new data with training factor levels; unseen levels fail.

    Grouping expressions get the same coercion to factors (and interaction
    realization) the training frame applied.  With ``strict_groups`` off
    (population-level prediction), grouping levels are not checked.
    """
    spec = fit.spec
    cols = dict(newdata.columns)
    for term in spec.formula.random:
        for g in term.grouping:
            if g in cols:
                cols[g] = _as_factor(cols[g], g)
        iname = term.grouping_name()
        if len(term.grouping) > 1 and iname not in cols:
            parts = [cols[g] for g in term.grouping]
            n = parts[0].n
            labels = [":".join(p.label(p.codes[i]) for p in parts)
                      for i in range(n)]
            from .data import factor_from_labels
            cols[iname] = factor_from_labels(labels)
    train_levels_by_name = dict(spec.factor_levels)
    if strict_groups:
        for t in (spec.terms or []):
            train_levels_by_name.setdefault(t.name, t.levels)
    out = {}
    for name, col in cols.items():
        train_levels = train_levels_by_name.get(name)
        if isinstance(col, FactorColumn) and train_levels is not None:
            index = {lvl: i for i, lvl in enumerate(train_levels)}
            codes = np.empty(col.n, dtype=np.int64)
            for i, c in enumerate(col.codes):
                lab = col.label(c)
                if lab not in index:
                    raise DataError(f"level {lab!r} of {name!r} was not "
                                    "present in the training data")
                codes[i] = index[lab]
            out[name] = FactorColumn(codes, list(train_levels))
        elif isinstance(col, FactorColumn):
            out[name] = col
        else:
            out[name] = NumericColumn(col.values.copy())
    return DataTable(out)


def predict(fit: FitResult, newdata: DataTable | None = None,
            conditional: bool = True) -> np.ndarray:
    """Linear predictor on new rows; conditional adds matched random effects."""
    if newdata is None:
        if conditional:
            return fitted(fit)
        out = fit.spec.offset.copy()
        if fit.p:
            out += fit.spec.X @ fit.beta
        return out
    spec = fit.spec
    ast = spec.formula
    frame = _newdata_frame(fit, newdata, strict_groups=conditional)
    level_log = {}
    X, names, _ = _build_matrix(frame, ast.intercept, ast.covariates,
                                level_log)
    if names != spec.x_names:
        raise ModelError("new data produced different model-matrix columns "
                         f"({names} vs {spec.x_names})")
    out = np.zeros(frame.nrow)
    if fit.p:
        out += X @ fit.beta
    offset_names = list(ast.offsets)
    if spec.offset_col is not None:
        offset_names.append(spec.offset_col)
    for o in offset_names:
        col = frame[o]
        if not isinstance(col, NumericColumn):
            raise ModelError(f"offset column {o!r} must be numeric")
        out += col.values
    if not conditional:
        return out
    if spec.terms is None:
        raise ModelError("conditional prediction is unavailable for custom "
                         "injected structures")
    modes = ranef(fit)
    ast_terms = {t.grouping_name(): t for t in ast.random}
    for term in spec.terms:
        rterm = ast_terms.get(term.name)
        if rterm is None:
            raise ModelError(f"no formula term for grouping {term.name!r}")
        if term.name not in frame.columns:
            raise DataError(f"missing grouping column {term.name!r}")
        codes = frame[term.name].codes
        Xi, cnms, _ = _build_matrix(frame, rterm.intercept, rterm.covariates,
                                    level_log)
        vals = modes[term.name]["values"]
        out += np.sum(Xi * vals[codes], axis=1)
    return out


# -- confidence intervals ----------------------------------------------------

def confint_wald(fit: FitResult, level: float = 0.95) -> dict:
    z = stats.norm_ppf(0.5 + level / 2.0)
    se = se_fixef(fit)
    return {name: (fit.beta[i] - z * se[i], fit.beta[i] + z * se[i])
            for i, name in enumerate(fit.spec.x_names)}


def confint(fit: FitResult, method: str = "wald", level: float = 0.95,
            profile_result=None, boot_result=None, nsim: int = 500,
            seed: int = 1, workers: int = 1) -> dict:
    """Per-parameter intervals by Wald, profile, or parametric bootstrap."""
    if method == "wald":
        return confint_wald(fit, level)
    if method == "profile":
        from .profile import profile as run_profile, profile_confint
        prof = profile_result
        if prof is None:
            prof = run_profile(fit)
        return profile_confint(prof, level)
    if method == "boot":
        from .bootstrap import bootstrap, bootstrap_confint
        boot = boot_result
        if boot is None:
            boot = bootstrap(fit, nsim=nsim, seed=seed, workers=workers)
        return bootstrap_confint(boot, level)
    raise ModelError(f"unknown confint method {method!r}")
