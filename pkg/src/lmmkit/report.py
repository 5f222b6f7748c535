"""Report assembly and serialization (JSON, CSV, aligned text).

JSON carries full precision and a stable key order; the text renderer
rounds the way model summaries are conventionally printed.
"""

from __future__ import annotations

import csv
import io
import json

import numpy as np

from .inference import (FitResult, aic, anova_seq, bic, corr_fixef,
                        residuals, se_fixef, tvalues_fixef, varcorr,
                        vcov_fixef)


def to_json(obj) -> str:
    return json.dumps(_plain(obj), indent=2, allow_nan=True)


def _plain(obj):
    if isinstance(obj, dict):
        return {k: _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return [_plain(v) for v in obj.tolist()]
    if isinstance(obj, (np.floating, np.integer)):
        return obj.item()
    return obj


def records_to_csv(records, columns=None) -> str:
    """RFC-4180 CSV for a list of flat dicts."""
    if columns is None:
        columns = list(records[0].keys()) if records else []
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(columns)
    for rec in records:
        writer.writerow(["" if rec.get(c) is None else rec.get(c)
                         for c in columns])
    return buf.getvalue()


def fit_report(fit: FitResult) -> dict:
    """Everything the fit summary shows, at full precision."""
    sr = residuals(fit, "pearson-scaled")
    qs = np.quantile(sr, [0.0, 0.25, 0.5, 0.75, 1.0])
    vc = varcorr(fit) if fit.spec.terms is not None else None
    groups = {}
    if fit.spec.terms is not None:
        for t in fit.spec.terms:
            groups[t.name] = t.nlev
    report = {
        "formula": fit.formula_string(),
        "reml": fit.reml,
        "n": fit.n,
        "groups": groups,
        "criterion": fit.criterion,
        "logLik": fit.logLik,
        "aic": aic(fit),
        "bic": bic(fit),
        "df": fit.df,
        "sigma": fit.sigma,
        "scaled_residuals": {"min": qs[0], "q1": qs[1], "median": qs[2],
                             "q3": qs[3], "max": qs[4]},
        "varcorr": vc.flat_records() if vc is not None else None,
        "fixed": [{"name": name, "estimate": fit.beta[i],
                   "se": None, "t": None}
                  for i, name in enumerate(fit.spec.x_names)],
        "vcov": vcov_fixef(fit),
        "fixed_correlation": corr_fixef(fit) if fit.p else [],
        "theta": fit.theta,
        "boundary": fit.opt.boundary,
        "n_eval": fit.opt.n_eval,
        "converged": fit.opt.converged,
    }
    if fit.p:
        se = se_fixef(fit)
        tv = tvalues_fixef(fit)
        for i, row in enumerate(report["fixed"]):
            row["se"] = se[i]
            row["t"] = tv[i]
    return report


def render_fit_text(report: dict) -> str:
    out = []
    kind = "REML" if report["reml"] else "maximum likelihood"
    out.append(f"Linear mixed model fit by {kind}")
    out.append(f"Formula: {report['formula']}")
    out.append("")
    label = ("REML criterion at convergence" if report["reml"]
             else "Deviance at convergence")
    out.append(f"{label}: {report['criterion']:.1f}")
    out.append("")
    out.append("Scaled residuals:")
    qs = report["scaled_residuals"]
    out.append("    Min      1Q  Median      3Q     Max")
    out.append(" ".join(f"{qs[k]:7.3f}" for k in
                        ("min", "q1", "median", "q3", "max")))
    out.append("")
    if report["varcorr"] is not None:
        out.append("Random effects:")
        out.append(f" {'Groups':<10} {'Name':<14} {'Variance':>9} "
                   f"{'Std.Dev.':>9} Corr")
        rows = report["varcorr"]
        # lower-triangle correlations per group, keyed by the later name
        names_by_grp = {}
        for rec in rows:
            if rec["grp"] != "Residual" and rec["var2"] is None:
                names_by_grp.setdefault(rec["grp"], []).append(rec["var1"])
        corr = {}
        for rec in rows:
            if rec["var2"] is not None:
                corr[(rec["grp"], rec["var2"], rec["var1"])] = rec["sdcor"]
        seen = set()
        for rec in rows:
            grp = rec["grp"]
            if grp == "Residual":
                out.append(f" {'Residual':<10} {'':<14} {rec['vcov']:9.3f} "
                           f"{rec['sdcor']:9.3f}")
            elif rec["var2"] is None:
                shown = grp if grp not in seen else ""
                seen.add(grp)
                line = (f" {shown:<10} {rec['var1']:<14} "
                        f"{rec['vcov']:9.3f} {rec['sdcor']:9.3f}")
                earlier = names_by_grp[grp]
                upto = earlier.index(rec["var1"])
                tail = " ".join(
                    f"{corr.get((grp, rec['var1'], other), 0.0):5.2f}"
                    for other in earlier[:upto])
                if tail:
                    line += " " + tail
                out.append(line)
        grp_str = ", ".join(f"{g}, {n}" for g, n in report["groups"].items())
        out.append(f"Number of obs: {report['n']}, groups: {grp_str}")
        out.append("")
    if report["fixed"]:
        out.append("Fixed effects:")
        out.append(f"{'':<14}{'Estimate':>10} {'Std. Error':>11} {'t value':>8}")
        for row in report["fixed"]:
            out.append(f"{row['name']:<14}{row['estimate']:>10.2f} "
                       f"{row['se']:>11.2f} {row['t']:>8.2f}")
        if len(report["fixed"]) > 1:
            out.append("")
            out.append("Correlation of Fixed Effects:")
            names = [row["name"] for row in report["fixed"]]
            corr = report["fixed_correlation"]
            header = "      " + " ".join(f"{n[:6]:>7}" for n in names[:-1])
            out.append(header)
            for i in range(1, len(names)):
                vals = " ".join(f"{corr[i][j]:7.3f}" for j in range(i))
                out.append(f"{names[i][:6]:<6}{vals}")
    return "\n".join(out) + "\n"


def anova_seq_report(fit: FitResult) -> list:
    return anova_seq(fit)


def render_records_text(records, columns=None) -> str:
    if not records:
        return "(empty)\n"
    if columns is None:
        columns = list(records[0].keys())
    cells = [[("" if rec.get(c) is None else
               (f"{rec[c]:.6g}" if isinstance(rec[c], (int, float, np.floating))
                and not isinstance(rec[c], bool) else str(rec[c])))
              for c in columns] for rec in records]
    widths = [max(len(str(c)), *(len(row[i]) for row in cells))
              for i, c in enumerate(columns)]
    lines = ["  ".join(f"{str(c):>{w}}" for c, w in zip(columns, widths))]
    for row in cells:
        lines.append("  ".join(f"{v:>{w}}" for v, w in zip(row, widths)))
    return "\n".join(lines) + "\n"
