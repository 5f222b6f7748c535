"""Evaluate a rewritten formula against data: model frame, X, Z', Lambda',
theta mapping, and the injection hooks for custom random-effects structures.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field, replace

import numpy as np

from .data import DataTable, FactorColumn, NumericColumn, factor_from_labels
from .errors import DataError, ModelError
from .formula import FormulaAst, parse_formula, rewrite
from .sparse import SparseCsc, from_triplets


@dataclass
class TermInfo:
    """Metadata for one random-effects term after evaluation."""

    name: str                 # grouping factor (or interaction) name
    cnms: list                # coefficient names, length p
    levels: list              # grouping levels, length nlev
    codes: np.ndarray | None  # per-row level index; None for injected terms

    @property
    def p(self) -> int:
        return len(self.cnms)

    @property
    def nlev(self) -> int:
        return len(self.levels)

    @property
    def q_i(self) -> int:
        return self.p * self.nlev

    @property
    def m_i(self) -> int:
        return self.p * (self.p + 1) // 2


@dataclass
class ModelSpec:
    """Everything the objective-function and output stages need."""

    formula: FormulaAst
    y: np.ndarray
    weights: np.ndarray
    offset: np.ndarray
    X: np.ndarray
    x_names: list
    x_assign: list            # (term label, [column indices]) in order
    Zt: SparseCsc
    Lambdat: SparseCsc
    Lind: np.ndarray          # 1-based indices into theta
    theta0: np.ndarray
    lower: np.ndarray
    terms: list | None        # TermInfo list; None once custom-injected
    reml: bool = True
    factor_levels: dict = field(default_factory=dict)
    weights_col: str | None = None
    offset_col: str | None = None

    @property
    def n(self) -> int:
        return len(self.y)

    @property
    def p(self) -> int:
        return self.X.shape[1]

    @property
    def q(self) -> int:
        return self.Zt.nrow

    @property
    def m(self) -> int:
        return len(self.theta0)

    @property
    def sqrtW(self) -> np.ndarray:
        return np.sqrt(self.weights)


def _used_columns(ast: FormulaAst):
    cols = [ast.response]
    for cov in ast.covariates:
        cols.extend(cov.split(":"))
    cols.extend(ast.offsets)
    for term in ast.random:
        cols.extend(term.covariates)
        cols.extend(term.grouping)
    seen = []
    for c in cols:
        if c not in seen:
            seen.append(c)
    return seen


def _as_factor(col, name):
    if isinstance(col, FactorColumn):
        return col
    labels = [None if np.isnan(v) else f"{v:g}" for v in col.values]
    return factor_from_labels(labels)


def build_model_frame(ast: FormulaAst, data: DataTable, extra_cols=(),
                      single_level: str = "error") -> DataTable:
    """Complete-case model frame with grouping expressions as factors."""
    used = _used_columns(ast)
    for name in extra_cols:
        if name not in used:
            used.append(name)
    for name in used:
        if name not in data:
            raise DataError(f"unknown column {name!r}")
    n = data.nrow
    keep = np.ones(n, dtype=bool)
    for name in used:
        keep &= ~data[name].isna()
    if not keep.any():
        raise DataError("no rows left after removing missing values")
    frame = data.subset(keep)
    frame = DataTable({name: frame[name] for name in used})
    # coerce grouping columns and realize interaction groupings
    for term in ast.random:
        for g in term.grouping:
            frame.columns[g] = _as_factor(frame[g], g)
        if len(term.grouping) > 1:
            iname = ":".join(term.grouping)
            if iname not in frame.columns:
                parts = [frame[g] for g in term.grouping]
                labels = []
                for i in range(frame.nrow):
                    labels.append(":".join(p.label(p.codes[i]) for p in parts))
                frame.columns[iname] = factor_from_labels(labels)
    for term in ast.random:
        gname = term.grouping_name() if not term.nested else None
        names = [gname] if gname else list(term.grouping)
        for name in names:
            if name is None or name not in frame.columns:
                continue
            col = frame[name]
            if isinstance(col, FactorColumn) and len(col.levels) < 2:
                msg = (f"grouping factor {name!r} has fewer than two levels")
                if single_level == "error":
                    raise DataError(msg)
                warnings.warn(msg)
    return frame


def _numeric_values(frame, name):
    col = frame[name]
    if not isinstance(col, NumericColumn):
        raise ModelError(f"column {name!r} must be numeric here")
    return col.values


def _expand_plain(frame, name, drop_first, level_log):
    col = frame[name]
    if isinstance(col, NumericColumn):
        return [(name, col.values.copy())]
    level_log[name] = list(col.levels)
    start = 1 if drop_first else 0
    return [(f"{name}={lvl}", (col.codes == code).astype(np.float64))
            for code, lvl in enumerate(col.levels) if code >= start]


def _expand_interaction(frame, a, b, drop_first, level_log):
    ca, cb = frame[a], frame[b]
    if isinstance(ca, NumericColumn) and isinstance(cb, NumericColumn):
        return [(f"{a}:{b}", ca.values * cb.values)]
    if isinstance(ca, NumericColumn) or isinstance(cb, NumericColumn):
        num, fac = (a, b) if isinstance(ca, NumericColumn) else (b, a)
        vals = frame[num].values
        fcol = frame[fac]
        level_log[fac] = list(fcol.levels)
        start = 1 if drop_first else 0
        return [(f"{num}:{fac}={lvl}",
                 vals * (fcol.codes == code).astype(np.float64))
                for code, lvl in enumerate(fcol.levels) if code >= start]
    level_log[a] = list(ca.levels)
    level_log[b] = list(cb.levels)
    labels = [f"{ca.label(ca.codes[i])}:{cb.label(cb.codes[i])}"
              for i in range(frame.nrow)]
    pair = factor_from_labels(labels)
    start = 1 if drop_first else 0
    return [(f"{a}:{b}={lvl}", (pair.codes == code).astype(np.float64))
            for code, lvl in enumerate(pair.levels) if code >= start]


def _build_matrix(frame, intercept, covariates, level_log):
    """Model-matrix construction with treatment coding for factors."""
    n = frame.nrow
    cols, names, assign = [], [], []
    if intercept:
        cols.append(np.ones(n))
        names.append("(Intercept)")
        assign.append(("(Intercept)", [0]))
    saw_factor_block = intercept
    for cov in covariates:
        drop_first = saw_factor_block
        if ":" in cov:
            a, b = cov.split(":", 1)
            pieces = _expand_interaction(frame, a, b, drop_first, level_log)
        else:
            pieces = _expand_plain(frame, cov, drop_first, level_log)
        if len(pieces) > 1 or "=" in pieces[0][0]:
            saw_factor_block = True
        idx = list(range(len(cols), len(cols) + len(pieces)))
        assign.append((cov, idx))
        for name, values in pieces:
            cols.append(values)
            names.append(name)
    X = np.column_stack(cols) if cols else np.empty((n, 0))
    return X, names, assign


def build_X(ast: FormulaAst, frame: DataTable):
    """Fixed-effects model matrix, its column names, and term assignment."""
    level_log = {}
    X, names, assign = _build_matrix(frame, ast.intercept, ast.covariates,
                                     level_log)
    return X, names, assign


def build_indicator(codes: np.ndarray, nlev: int) -> SparseCsc:
    """Transposed indicator matrix J' (nlev x n); one 1 per column."""
    codes = np.asarray(codes, dtype=np.int64)
    if len(codes) and (codes.min() < 0 or codes.max() >= nlev):
        raise ModelError("factor index out of range")
    n = len(codes)
    return SparseCsc(nlev, n, np.arange(n + 1, dtype=np.int64), codes.copy(),
                     np.ones(n))


def build_Zti(Ji_t: SparseCsc, Xi: np.ndarray) -> SparseCsc:
    """Term-wise Z_i' via column-wise Kronecker of indicator and raw rows."""
    Xi = np.atleast_2d(np.asarray(Xi, dtype=np.float64))
    n = Ji_t.ncol
    if Xi.shape[0] != n:
        raise ModelError(f"raw matrix has {Xi.shape[0]} rows, expected {n}")
    if np.any(np.diff(Ji_t.colptr) != 1):
        raise ModelError("indicator matrix must have one entry per column")
    codes = Ji_t.rowidx
    p = Xi.shape[1]
    rowidx = (codes[:, None] * p + np.arange(p)).ravel()
    colptr = np.arange(n + 1, dtype=np.int64) * p
    return SparseCsc(Ji_t.nrow * p, n, colptr, rowidx.astype(np.int64),
                     Xi.ravel().copy())


def _theta_index(r: int, c: int, p: int) -> int:
    """0-based position of template entry T[c, r] (r <= c) in the
    column-major lower-triangle parameter layout."""
    return c + r * p - r * (r + 1) // 2


def _term_structures(term_infos):
    """Block-diagonal Lambda' pattern plus Lind/theta0/lower across terms."""
    q = sum(t.q_i for t in term_infos)
    m = sum(t.m_i for t in term_infos)
    colptr = [0]
    rowidx, lind = [], []
    theta_off = 0
    row_off = 0
    for t in term_infos:
        p = t.p
        for _ in range(t.nlev):
            for c in range(p):
                for r in range(c + 1):
                    rowidx.append(row_off + r)
                    lind.append(theta_off + _theta_index(r, c, p) + 1)
                colptr.append(len(rowidx))
            row_off += p
        theta_off += t.m_i
    # parameters follow the column-major lower triangle of each template;
    # diagonal positions start at 1 with lower bound 0, off-diagonals at 0
    theta0 = np.zeros(m)
    lower = np.full(m, -np.inf)
    off = 0
    for t in term_infos:
        for j in range(t.p):
            pos = off + _theta_index(j, j, t.p)
            theta0[pos] = 1.0
            lower[pos] = 0.0
        off += t.m_i
    values = theta0[np.asarray(lind) - 1]
    lambdat = SparseCsc(q, q, np.asarray(colptr, dtype=np.int64),
                        np.asarray(rowidx, dtype=np.int64), values)
    return lambdat, np.asarray(lind, dtype=np.int64), theta0, lower


def assemble_spec(ast: FormulaAst, frame: DataTable, reml: bool = True,
                  weights_col: str | None = None,
                  offset_col: str | None = None) -> ModelSpec:
    """Build the full model specification from a rewritten formula."""
    if any(t.nested or not t.correlated for t in ast.random):
        ast = rewrite(ast)
    if not ast.random:
        raise ModelError("at least one random-effects term is required")
    level_log = {}
    y = _numeric_values(frame, ast.response)
    n = len(y)
    X, x_names, x_assign = _build_matrix(frame, ast.intercept, ast.covariates,
                                         level_log)
    offset = np.zeros(n)
    for o in ast.offsets:
        offset = offset + _numeric_values(frame, o)
    if offset_col is not None:
        offset = offset + _numeric_values(frame, offset_col)
    weights = np.ones(n)
    if weights_col is not None:
        weights = _numeric_values(frame, weights_col).copy()
        if np.any(weights <= 0):
            raise ModelError("weights must be strictly positive")

    raw = []
    for term in ast.random:
        gname = term.grouping_name()
        gcol = frame[gname]
        if not isinstance(gcol, FactorColumn):
            raise ModelError(f"grouping column {gname!r} is not categorical")
        Xi, cnms, _ = _build_matrix(frame, term.intercept, term.covariates,
                                    level_log)
        if Xi.shape[1] == 0:
            raise ModelError(f"random-effects term ({gname}) has no columns")
        info = TermInfo(gname, cnms, list(gcol.levels), gcol.codes.copy())
        raw.append((info, Xi))
    raw.sort(key=lambda pair: -pair[0].nlev)  # stable on ties

    term_infos = [info for info, _ in raw]
    rows, cols, vals = [], [], []
    row_off = 0
    for info, Xi in raw:
        zti = build_Zti(build_indicator(info.codes, info.nlev), Xi)
        reps = np.diff(zti.colptr)
        cols.append(np.repeat(np.arange(n, dtype=np.int64), reps))
        rows.append(zti.rowidx + row_off)
        vals.append(zti.values)
        row_off += zti.nrow
    Zt = from_triplets(row_off, n, np.concatenate(rows), np.concatenate(cols),
                       np.concatenate(vals))
    lambdat, lind, theta0, lower = _term_structures(term_infos)

    spec = ModelSpec(ast, y.copy(), weights, offset, X, x_names, x_assign,
                     Zt, lambdat, lind, theta0, lower, term_infos, reml,
                     level_log, weights_col, offset_col)
    _check_spec(spec)
    return spec


def _check_spec(spec: ModelSpec):
    if spec.terms is not None:
        q = sum(t.q_i for t in spec.terms)
        if q != spec.Zt.nrow:
            raise ModelError("Z' row count does not match term dimensions")
        nlevs = [t.nlev for t in spec.terms]
        if any(a < b for a, b in zip(nlevs, nlevs[1:])):
            raise ModelError("terms must be sorted by decreasing level count")
    if spec.Lambdat.nrow != spec.Zt.nrow:
        raise ModelError("Lambda' dimension does not match Z'")
    if len(spec.Lind) != spec.Lambdat.nnz:
        raise ModelError("Lind length must equal nnz(Lambda')")
    if len(spec.Lind) and (spec.Lind.min() < 1 or spec.Lind.max() > spec.m):
        raise ModelError("Lind values must lie in 1..m")
    if len(spec.theta0) != len(spec.lower):
        raise ModelError("theta0 and lower length mismatch")
    if np.any(spec.theta0 < spec.lower):
        raise ModelError("theta0 violates the lower bounds")


def lambda_values(spec: ModelSpec, theta: np.ndarray) -> np.ndarray:
    """Scatter theta through Lind into the stored nonzeros of Lambda'."""
    theta = np.asarray(theta, dtype=np.float64)
    if len(theta) != spec.m:
        raise ModelError(f"theta has length {len(theta)}, expected {spec.m}")
    return theta[spec.Lind - 1]


def inject_Zt(spec: ModelSpec, Zt: SparseCsc | None = None,
              Lambdat: SparseCsc | None = None,
              Lind: np.ndarray | None = None,
              theta0: np.ndarray | None = None,
              lower: np.ndarray | None = None,
              terms="keep") -> ModelSpec:
    """Replace random-effects structures; downstream stages are agnostic.

    ``terms`` may be "keep" (retain metadata when dimensions still agree),
    None (structure is custom; per-term reports are disabled), or a new
    TermInfo list.
    """
    new = replace(spec)
    if Zt is not None:
        Zt.validate()
        if Zt.ncol != spec.n:
            raise ModelError(f"injected Z' has {Zt.ncol} columns, "
                             f"expected {spec.n}")
        new.Zt = Zt
    if Lambdat is not None:
        Lambdat.validate()
        new.Lambdat = Lambdat
    if Lind is not None:
        new.Lind = np.asarray(Lind, dtype=np.int64)
    if theta0 is not None:
        new.theta0 = np.asarray(theta0, dtype=np.float64)
    if lower is not None:
        new.lower = np.asarray(lower, dtype=np.float64)
    if new.Lambdat.nrow != new.Lambdat.ncol or new.Lambdat.nrow != new.Zt.nrow:
        raise ModelError("Lambda' must be square with dimension rows(Z')")
    if terms == "keep":
        keep_ok = (spec.terms is not None
                   and sum(t.q_i for t in spec.terms) == new.Zt.nrow)
        new.terms = spec.terms if keep_ok else None
    else:
        new.terms = terms
    new.Lambdat = replace(new.Lambdat,
                          values=new.theta0[new.Lind - 1].astype(np.float64))
    _check_spec(new)
    return new


def homogeneous_variance(spec: ModelSpec) -> ModelSpec:
    """All random effects share one variance: diagonal Lambda', scalar theta."""
    q = spec.q
    idx = np.arange(q, dtype=np.int64)
    lam = SparseCsc(q, q, np.arange(q + 1, dtype=np.int64), idx, np.ones(q))
    names = "+".join(t.name for t in spec.terms) if spec.terms else "all"
    pooled = TermInfo(names, ["(pooled)"],
                      [str(i + 1) for i in range(q)], None)
    return inject_Zt(spec, Lambdat=lam, Lind=np.ones(q, dtype=np.int64),
                     theta0=np.array([1.0]), lower=np.array([0.0]),
                     terms=[pooled])


def shared_template(spec: ModelSpec) -> ModelSpec:
    """All terms share one covariance template (requires equal p)."""
    if spec.terms is None:
        raise ModelError("shared_template needs per-term metadata")
    ps = {t.p for t in spec.terms}
    if len(ps) != 1:
        raise ModelError("shared template requires terms with equal "
                         "coefficient counts")
    nth = spec.terms[0].m_i
    nnz = spec.Lambdat.nnz
    lind = np.tile(np.arange(1, nth + 1, dtype=np.int64), nnz // nth)
    return inject_Zt(spec, Lind=lind, theta0=spec.theta0[:nth].copy(),
                     lower=spec.lower[:nth].copy(), terms=spec.terms)


def build_spec(formula: str, data: DataTable, reml: bool = True,
               weights_col: str | None = None, offset_col: str | None = None,
               single_level: str = "error") -> ModelSpec:
    """Parse, rewrite, frame, and assemble in one call."""
    ast = rewrite(parse_formula(formula))
    extra = [c for c in (weights_col, offset_col) if c]
    frame = build_model_frame(ast, data, extra_cols=extra,
                              single_level=single_level)
    return assemble_spec(ast, frame, reml=reml, weights_col=weights_col,
                         offset_col=offset_col)
