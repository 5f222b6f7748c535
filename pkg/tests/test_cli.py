import json

import numpy as np
import pytest
from click.testing import CliRunner

from lmmkit.cli import ingest_csv, main
from lmmkit.data import FactorColumn, NumericColumn
from lmmkit.errors import CsvError


@pytest.fixture
def runner():
    return CliRunner()


class TestIngest:
    def test_sleepstudy_types(self, sleepstudy_path):
        table = ingest_csv(sleepstudy_path)
        assert table.nrow == 180
        assert isinstance(table["Reaction"], NumericColumn)
        assert isinstance(table["Days"], NumericColumn)
        # Subject values all parse as numbers, so the column reads numeric;
        # model building coerces grouping expressions to factors later
        assert isinstance(table["Subject"], NumericColumn)

    def test_mixed_column_is_categorical(self, tmp_path):
        path = tmp_path / "t.csv"
        path.write_text("a,b\n1,x\n2,y\nx,y\n")
        table = ingest_csv(path)
        assert isinstance(table["a"], FactorColumn)
        assert table["a"].levels == ["1", "2", "x"]

    def test_empty_cells_are_missing(self, tmp_path):
        path = tmp_path / "t.csv"
        path.write_text("a,b\n1,\n,x\n2,y\n")
        table = ingest_csv(path)
        assert np.isnan(table["a"].values[1])
        assert table["b"].codes[0] == -1

    def test_ragged_row_reports_line(self, tmp_path):
        path = tmp_path / "t.csv"
        path.write_text("a,b\n1,2\n3\n")
        with pytest.raises(CsvError, match="line 3"):
            ingest_csv(path)

    def test_duplicate_headers(self, tmp_path):
        path = tmp_path / "t.csv"
        path.write_text("a,a\n1,2\n")
        with pytest.raises(CsvError, match="duplicate"):
            ingest_csv(path)

    def test_empty_file(self, tmp_path):
        path = tmp_path / "t.csv"
        path.write_text("")
        with pytest.raises(CsvError, match="empty"):
            ingest_csv(path)

    def test_quoted_fields(self, tmp_path):
        path = tmp_path / "t.csv"
        path.write_text('a,b\n"1.5","hello, world"\n2,plain\n')
        table = ingest_csv(path)
        assert table["a"].values[0] == 1.5
        assert table["b"].levels == ["hello, world", "plain"]


FIT_ARGS = ["fit", "--formula", "Reaction ~ Days + (Days|Subject)"]


class TestFitCommand:
    def test_summary_table(self, runner, sleepstudy_path):
        res = runner.invoke(main, FIT_ARGS + ["--data", str(sleepstudy_path)])
        assert res.exit_code == 0
        assert "REML criterion at convergence: 1743.6" in res.output
        assert "Scaled residuals:" in res.output
        assert "(Intercept)" in res.output
        assert "-0.138" in res.output

    def test_json_report(self, runner, sleepstudy_path):
        res = runner.invoke(main, FIT_ARGS + ["--data", str(sleepstudy_path),
                                              "--format", "json"])
        assert res.exit_code == 0
        report = json.loads(res.output)
        assert report["criterion"] == pytest.approx(1743.628, abs=0.01)
        assert report["fixed"][0]["estimate"] == pytest.approx(251.405,
                                                               abs=0.01)
        # round trip: parse(print(x)) == x
        assert json.loads(json.dumps(report)) == report

    def test_table_and_json_numbers_agree(self, runner, sleepstudy_path):
        js = runner.invoke(main, FIT_ARGS + ["--data", str(sleepstudy_path),
                                             "--format", "json"])
        report = json.loads(js.output)
        tbl = runner.invoke(main, FIT_ARGS + ["--data", str(sleepstudy_path)])
        assert f"{report['criterion']:.1f}" in tbl.output
        for rec in report["varcorr"]:
            if rec["grp"] != "Residual" and rec["var2"] is None:
                assert f"{rec['sdcor']:9.3f}" in tbl.output

    def test_ml_flag(self, runner, sleepstudy_path):
        res = runner.invoke(main, FIT_ARGS + ["--data", str(sleepstudy_path),
                                              "--ml", "--format", "json"])
        report = json.loads(res.output)
        assert not report["reml"]
        assert report["criterion"] == pytest.approx(1751.94, abs=0.05)

    def test_output_file(self, runner, sleepstudy_path, tmp_path):
        out = tmp_path / "report.json"
        res = runner.invoke(main, FIT_ARGS + ["--data", str(sleepstudy_path),
                                              "--format", "json",
                                              "--out", str(out)])
        assert res.exit_code == 0
        assert json.loads(out.read_text())["n"] == 180

    def test_missing_file_is_io_error(self, runner):
        res = runner.invoke(main, FIT_ARGS + ["--data", "nosuch.csv"])
        assert res.exit_code == 1

    def test_bad_formula_is_model_error(self, runner, sleepstudy_path):
        res = runner.invoke(main, ["fit", "--formula", "Reaction ~ (",
                                   "--data", str(sleepstudy_path)])
        assert res.exit_code == 2

    def test_unknown_column_is_model_error(self, runner, sleepstudy_path):
        res = runner.invoke(main, ["fit", "--formula", "Wrong ~ (1|Subject)",
                                   "--data", str(sleepstudy_path)])
        assert res.exit_code == 2

    def test_ragged_csv_is_io_error(self, runner, tmp_path):
        path = tmp_path / "bad.csv"
        path.write_text("y,g\n1,a\n2\n")
        res = runner.invoke(main, ["fit", "--formula", "y ~ (1|g)",
                                   "--data", str(path)])
        assert res.exit_code == 1

    def test_amd_ordering_matches_natural(self, runner, sleepstudy_path):
        a = runner.invoke(main, FIT_ARGS + ["--data", str(sleepstudy_path),
                                            "--format", "json"])
        b = runner.invoke(main, FIT_ARGS + ["--data", str(sleepstudy_path),
                                            "--format", "json",
                                            "--ordering", "amd"])
        ra, rb = json.loads(a.output), json.loads(b.output)
        assert ra["criterion"] == pytest.approx(rb["criterion"], abs=1e-6)


class TestAnovaCommand:
    def test_model_comparison(self, runner, sleepstudy_path):
        res = runner.invoke(main, [
            "anova",
            "--formula", "Reaction ~ Days + (Days|Subject)",
            "--formula", "Reaction ~ Days + (Days||Subject)",
            "--formula", "Reaction ~ Days + (1|Subject)",
            "--data", str(sleepstudy_path), "--format", "json"])
        assert res.exit_code == 0
        rows = json.loads(res.output)
        assert rows[1]["chisq"] == pytest.approx(42.08, abs=0.2)
        assert rows[2]["chisq"] == pytest.approx(0.06, abs=0.05)

    def test_sequential_table(self, runner, sleepstudy_path):
        res = runner.invoke(main, [
            "anova", "--formula", "Reaction ~ Days + (Days|Subject)",
            "--data", str(sleepstudy_path), "--format", "json"])
        rows = json.loads(res.output)
        assert rows[0]["term"] == "Days"


class TestDeterminism:
    def test_bootstrap_byte_identical(self, runner, sleepstudy_path):
        args = ["bootstrap", "--formula", "Reaction ~ Days + (1|Subject)",
                "--data", str(sleepstudy_path), "--nsim", "10",
                "--seed", "7", "--format", "json"]
        a = runner.invoke(main, args)
        b = runner.invoke(main, args)
        assert a.exit_code == 0
        assert a.output.encode() == b.output.encode()

    def test_bootstrap_worker_invariance(self, runner, sleepstudy_path):
        base = ["bootstrap", "--formula", "Reaction ~ Days + (1|Subject)",
                "--data", str(sleepstudy_path), "--nsim", "6",
                "--seed", "3", "--format", "json"]
        a = runner.invoke(main, base + ["--workers", "1"])
        b = runner.invoke(main, base + ["--workers", "2"])
        assert a.output.encode() == b.output.encode()

    def test_simulate_byte_identical(self, runner, sleepstudy_path):
        args = ["simulate", "--formula", "Reaction ~ Days + (1|Subject)",
                "--data", str(sleepstudy_path), "--nsim", "3",
                "--seed", "11", "--format", "json"]
        a = runner.invoke(main, args)
        b = runner.invoke(main, args)
        assert a.output.encode() == b.output.encode()


class TestPredictSimulate:
    def test_predict_training(self, runner, sleepstudy_path):
        res = runner.invoke(main, [
            "predict", "--formula", "Reaction ~ Days + (Days|Subject)",
            "--data", str(sleepstudy_path), "--format", "json"])
        rows = json.loads(res.output)
        assert len(rows) == 180
        assert rows[0]["prediction"] == pytest.approx(253.664, abs=0.05)

    def test_predict_population_newdata(self, runner, sleepstudy_path,
                                        tmp_path):
        nd = tmp_path / "new.csv"
        nd.write_text("Days,Subject\n0,308\n9,308\n")
        res = runner.invoke(main, [
            "predict", "--formula", "Reaction ~ Days + (Days|Subject)",
            "--data", str(sleepstudy_path), "--newdata", str(nd),
            "--population", "--format", "json"])
        rows = json.loads(res.output)
        assert rows[0]["prediction"] == pytest.approx(251.405, abs=0.01)
        assert rows[1]["prediction"] == pytest.approx(251.405 + 9 * 10.467,
                                                      abs=0.05)

    def test_simulate_shape(self, runner, sleepstudy_path):
        res = runner.invoke(main, [
            "simulate", "--formula", "Reaction ~ Days + (1|Subject)",
            "--data", str(sleepstudy_path), "--nsim", "4", "--seed", "2",
            "--format", "json"])
        payload = json.loads(res.output)
        values = np.asarray(payload["values"])
        assert values.shape == (180, 4)


class TestProfileCommand:
    def test_profile_intervals(self, runner, sleepstudy_path):
        res = runner.invoke(main, [
            "profile", "--formula", "Reaction ~ Days + (1|Subject)",
            "--data", str(sleepstudy_path), "--format", "json"])
        assert res.exit_code == 0
        payload = json.loads(res.output)
        assert "sigma" in payload["intervals"]
        assert payload["points"]
        # parse(print(x)) round trip
        assert json.loads(json.dumps(payload)) == payload


class TestDegenerateModels:
    def test_offset_only_fit_summary(self, runner, tmp_path):
        rng = np.random.default_rng(3)
        path = tmp_path / "toy.csv"
        lines = ["y,o,g"]
        for i in range(12):
            lines.append(f"{rng.standard_normal() + 1.0:.6f},1.0,L{i % 3}")
        path.write_text("\n".join(lines) + "\n")
        res = runner.invoke(main, ["fit", "--formula",
                                   "y ~ 0 + offset(o) + (1|g)",
                                   "--data", str(path)])
        assert res.exit_code == 0
        assert "Random effects:" in res.output
        js = runner.invoke(main, ["fit", "--formula",
                                  "y ~ 0 + offset(o) + (1|g)",
                                  "--data", str(path), "--format", "json"])
        report = json.loads(js.output)
        assert report["fixed"] == []

    def test_anova_json_roundtrip(self, runner, sleepstudy_path):
        res = runner.invoke(main, [
            "anova", "--formula", "Reaction ~ Days + (1|Subject)",
            "--data", str(sleepstudy_path), "--format", "json"])
        payload = json.loads(res.output)
        assert json.loads(json.dumps(payload)) == payload

    def test_predict_json_roundtrip(self, runner, sleepstudy_path):
        res = runner.invoke(main, [
            "predict", "--formula", "Reaction ~ Days + (1|Subject)",
            "--data", str(sleepstudy_path), "--format", "json"])
        payload = json.loads(res.output)
        assert json.loads(json.dumps(payload)) == payload

    def test_predict_carries_offset_column(self, runner, tmp_path):
        rng = np.random.default_rng(9)
        train = tmp_path / "train.csv"
        lines = ["y,off,g"]
        for i in range(20):
            lines.append(f"{rng.standard_normal():.5f},"
                         f"{(i % 4) * 0.5},L{i % 4}")
        train.write_text("\n".join(lines) + "\n")
        res = runner.invoke(main, [
            "predict", "--formula", "y ~ (1|g)", "--data", str(train),
            "--offset", "off", "--newdata", str(train),
            "--format", "json"])
        assert res.exit_code == 0
        rows = json.loads(res.output)
        fitted_run = runner.invoke(main, [
            "predict", "--formula", "y ~ (1|g)", "--data", str(train),
            "--offset", "off", "--format", "json"])
        fitted_rows = json.loads(fitted_run.output)
        for a, b in zip(rows, fitted_rows):
            assert a["prediction"] == pytest.approx(b["prediction"],
                                                    abs=1e-10)
