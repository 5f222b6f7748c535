"""Command-line front end: CSV in, fitted models and tables out."""

from __future__ import annotations

import csv
import sys

import click
import numpy as np

from . import report as rpt
from .bootstrap import bootstrap, bootstrap_confint
from .data import DataTable, NumericColumn, factor_from_labels
from .errors import CsvError, LmmError
from .inference import anova_compare, anova_seq, fit as fit_model, predict, \
    simulate
from .profile import profile, profile_confint

EXIT_OK, EXIT_IO, EXIT_MODEL = 0, 1, 2


def ingest_csv(path) -> DataTable:
    """Typed CSV reader: a column is numeric when every non-empty cell
    parses as a decimal number; empty cells become missing values."""
    try:
        with open(path, "r", newline="", encoding="utf-8") as fh:
            reader = csv.reader(fh)
            try:
                header = next(reader)
            except StopIteration:
                raise CsvError(f"{path}: empty file") from None
            if len(set(header)) != len(header):
                dupes = sorted({h for h in header if header.count(h) > 1})
                raise CsvError(f"{path}: duplicate headers {dupes}")
            rows = []
            for lineno, row in enumerate(reader, start=2):
                if not row:
                    continue
                if len(row) != len(header):
                    raise CsvError(f"{path}: line {lineno} has {len(row)} "
                                   f"fields, expected {len(header)}")
                rows.append(row)
    except OSError as exc:
        raise CsvError(f"{path}: {exc}") from None
    if not rows:
        raise CsvError(f"{path}: no data rows")
    columns = {}
    for j, name in enumerate(header):
        cells = [row[j].strip() for row in rows]
        numeric = True
        values = []
        for cell in cells:
            if cell == "":
                values.append(np.nan)
                continue
            try:
                values.append(float(cell))
            except ValueError:
                numeric = False
                break
        if numeric:
            columns[name] = NumericColumn(np.asarray(values))
        else:
            columns[name] = factor_from_labels(
                [None if c == "" else c for c in cells])
    return DataTable(columns)


def _emit(text: str, out_path):
    if out_path:
        with open(out_path, "w", encoding="utf-8") as fh:
            fh.write(text)
    else:
        click.echo(text, nl=False)


def _records_out(records, fmt, out, columns=None):
    if fmt == "json":
        _emit(rpt.to_json(records) + "\n", out)
    else:
        _emit(rpt.render_records_text(records, columns), out)


_common = [
    click.option("--data", "data_path", required=True,
                 type=click.Path(), help="input CSV file"),
    click.option("--reml/--ml", "reml", default=True,
                 help="criterion to minimize (default REML)"),
    click.option("--weights", "weights_col", default=None,
                 help="name of a prior-weights column"),
    click.option("--offset", "offset_col", default=None,
                 help="name of an offset column"),
    click.option("--ftol", default=1e-8, show_default=True,
                 help="function tolerance for convergence"),
    click.option("--xtol", default=1e-7, show_default=True,
                 help="parameter tolerance for convergence"),
    click.option("--max-eval", default=10_000, show_default=True,
                 help="evaluation cap for the optimizer"),
    click.option("--ordering", default="natural", show_default=True,
                 type=click.Choice(["natural", "amd"]),
                 help="fill-reducing ordering for the sparse factor"),
    click.option("--format", "fmt", default="table", show_default=True,
                 type=click.Choice(["table", "json"])),
    click.option("--out", "out", default=None, type=click.Path(),
                 help="write the report here instead of stdout"),
]


def _with_common(fn):
    for opt in reversed(_common):
        fn = opt(fn)
    return fn


def _load_and_fit(formula, data_path, reml, weights_col, offset_col,
                  ftol, xtol, max_eval, ordering):
    data = ingest_csv(data_path)
    return fit_model(formula, data, reml=reml, weights_col=weights_col,
                     offset_col=offset_col, ordering=ordering, ftol=ftol,
                     xtol=xtol, max_eval=max_eval)


@click.group()
def main():
    """Linear mixed-effects models from CSV files."""


@main.command("fit")
@click.option("--formula", required=True, help="model formula")
@_with_common
def cmd_fit(formula, data_path, reml, weights_col, offset_col, ftol, xtol,
            max_eval, ordering, fmt, out):
    """Fit one model and print its summary."""
    try:
        result = _load_and_fit(formula, data_path, reml, weights_col,
                               offset_col, ftol, xtol, max_eval, ordering)
        report = rpt.fit_report(result)
        if fmt == "json":
            _emit(rpt.to_json(report) + "\n", out)
        else:
            _emit(rpt.render_fit_text(report), out)
    except CsvError as exc:
        _fail(exc, EXIT_IO)
    except LmmError as exc:
        _fail(exc, EXIT_MODEL)


@main.command("profile")
@click.option("--formula", required=True)
@click.option("--level", default=0.95, show_default=True)
@click.option("--workers", default=1, show_default=True)
@_with_common
def cmd_profile(formula, level, workers, data_path, reml, weights_col,
                offset_col, ftol, xtol, max_eval, ordering, fmt, out):
    """Profile the likelihood and report intervals plus trace points."""
    try:
        result = _load_and_fit(formula, data_path, reml, weights_col,
                               offset_col, ftol, xtol, max_eval, ordering)
        prof = profile(result)
        intervals = profile_confint(prof, level)
        payload = {
            "level": level,
            "cutoff": prof.cutoff,
            "intervals": {k: list(v) for k, v in intervals.items()},
            "points": prof.records(),
        }
        if fmt == "json":
            _emit(rpt.to_json(payload) + "\n", out)
        else:
            recs = [{"parameter": k, "lower": v[0], "upper": v[1]}
                    for k, v in intervals.items()]
            text = rpt.render_records_text(recs)
            text += "\n" + rpt.render_records_text(prof.records())
            _emit(text, out)
    except CsvError as exc:
        _fail(exc, EXIT_IO)
    except LmmError as exc:
        _fail(exc, EXIT_MODEL)


@main.command("bootstrap")
@click.option("--formula", required=True)
@click.option("--nsim", required=True, type=int)
@click.option("--seed", default=1, show_default=True, type=int)
@click.option("--workers", default=1, show_default=True, type=int)
@click.option("--level", default=0.95, show_default=True)
@_with_common
def cmd_bootstrap(formula, nsim, seed, workers, level, data_path, reml,
                  weights_col, offset_col, ftol, xtol, max_eval, ordering,
                  fmt, out):
    """Parametric bootstrap: simulate, refit, and tabulate the draws."""
    try:
        result = _load_and_fit(formula, data_path, reml, weights_col,
                               offset_col, ftol, xtol, max_eval, ordering)
        boot = bootstrap(result, nsim=nsim, seed=seed, workers=workers)
        intervals = bootstrap_confint(boot, level)
        payload = {
            "nsim": boot.nsim,
            "seed": boot.seed,
            "failures": boot.failures,
            "level": level,
            "intervals": {k: list(v) for k, v in intervals.items()},
            "draws": {"names": boot.names, "values": boot.draws},
        }
        if fmt == "json":
            _emit(rpt.to_json(payload) + "\n", out)
        else:
            recs = [{"parameter": k, "lower": v[0], "upper": v[1]}
                    for k, v in intervals.items()]
            text = rpt.render_records_text(recs)
            text += "\n" + rpt.render_records_text(boot.records())
            _emit(text, out)
    except CsvError as exc:
        _fail(exc, EXIT_IO)
    except LmmError as exc:
        _fail(exc, EXIT_MODEL)


@main.command("anova")
@click.option("--formula", "formulas", required=True, multiple=True,
              help="one for a sequential table, several for comparison")
@_with_common
def cmd_anova(formulas, data_path, reml, weights_col, offset_col, ftol,
              xtol, max_eval, ordering, fmt, out):
    """Sequential decomposition or likelihood-ratio model comparison."""
    try:
        fits = [_load_and_fit(f, data_path, reml, weights_col, offset_col,
                              ftol, xtol, max_eval, ordering)
                for f in formulas]
        if len(fits) == 1:
            records = anova_seq(fits[0])
        else:
            records = anova_compare(fits)
        _records_out(records, fmt, out)
    except CsvError as exc:
        _fail(exc, EXIT_IO)
    except LmmError as exc:
        _fail(exc, EXIT_MODEL)


@main.command("predict")
@click.option("--formula", required=True)
@click.option("--newdata", "newdata_path", default=None, type=click.Path(),
              help="CSV of rows to predict (defaults to the training data)")
@click.option("--population", is_flag=True,
              help="ignore random effects (population-level prediction)")
@_with_common
def cmd_predict(formula, newdata_path, population, data_path, reml,
                weights_col, offset_col, ftol, xtol, max_eval, ordering,
                fmt, out):
    """Predicted values, conditional on the fitted random effects or not."""
    try:
        result = _load_and_fit(formula, data_path, reml, weights_col,
                               offset_col, ftol, xtol, max_eval, ordering)
        newdata = ingest_csv(newdata_path) if newdata_path else None
        values = predict(result, newdata, conditional=not population)
        records = [{"row": i + 1, "prediction": float(v)}
                   for i, v in enumerate(values)]
        _records_out(records, fmt, out)
    except CsvError as exc:
        _fail(exc, EXIT_IO)
    except LmmError as exc:
        _fail(exc, EXIT_MODEL)


@main.command("simulate")
@click.option("--formula", required=True)
@click.option("--nsim", required=True, type=int)
@click.option("--seed", default=1, show_default=True, type=int)
@click.option("--mode", default="newRE", show_default=True,
              type=click.Choice(["newRE", "useU", "population"]))
@_with_common
def cmd_simulate(formula, nsim, seed, mode, data_path, reml, weights_col,
                 offset_col, ftol, xtol, max_eval, ordering, fmt, out):
    """Simulate responses from the fitted model."""
    try:
        result = _load_and_fit(formula, data_path, reml, weights_col,
                               offset_col, ftol, xtol, max_eval, ordering)
        sims = simulate(result, nsim=nsim, seed=seed, conditional=mode)
        payload = {"nsim": nsim, "seed": seed, "mode": mode,
                   "values": sims}
        if fmt == "json":
            _emit(rpt.to_json(payload) + "\n", out)
        else:
            records = [dict({"row": i + 1},
                            **{f"sim_{j + 1}": sims[i, j]
                               for j in range(sims.shape[1])})
                       for i in range(sims.shape[0])]
            _records_out(records, fmt, out)
    except CsvError as exc:
        _fail(exc, EXIT_IO)
    except LmmError as exc:
        _fail(exc, EXIT_MODEL)


def _fail(exc, code):
    click.echo(f"error [{type(exc).__name__}]: {exc}", err=True)
    sys.exit(code)


if __name__ == "__main__":
    main()
