import csv
import io
import json

import pytest
from click.testing import CliRunner

from hidden_csma.cli import COMPARISON_COLUMNS, SWEEP_COLUMNS, fmt, main

SMALL_SIM = ["--n", "100", "--L", "8", "--R", "4", "--warmup", "500", "--slots", "4000"]


@pytest.fixture
def runner():
    return CliRunner()


def rows(text):
    return list(csv.DictReader(io.StringIO(text)))


def test_solve_reports_fixed_point(runner):
    r = runner.invoke(main, ["solve", "--p-tx", "0.1", "--L", "32", "--R", "16"])
    assert r.exit_code == 0, r.output
    line = next(x for x in r.output.splitlines() if x.startswith("p_OF"))
    assert abs(float(line.split("=")[1]) - 0.0996) < 5e-4


def test_solve_json_and_oracle(runner, tmp_path):
    out = tmp_path / "m.json"
    r = runner.invoke(main, ["solve", "--p-tx", "0.05", "--L", "16", "--R", "4", "--format", "json",
                             "--oracle", "--out", str(out)])
    assert r.exit_code == 0, r.output
    d = json.loads(out.read_text())
    assert d["L"] == 16 and d["oracle_max_deviation"] < 1e-9
    assert set(d["support"]) >= {"pII", "pBV"}


def test_solve_invalid_p_tx(runner):
    r = runner.invoke(main, ["solve", "--p-tx", "1.5", "--L", "32", "--R", "16"])
    assert r.exit_code == 3
    assert "p_tx" in r.output


def test_solve_missing_flag(runner):
    assert runner.invoke(main, ["solve", "--p-tx", "0.1"]).exit_code == 2


def test_solve_sync_regime(runner):
    r = runner.invoke(main, ["solve", "--p-tx", "0.8", "--L", "32", "--R", "16"])
    assert r.exit_code == 0
    out = dict(x.split("=", 1) for x in r.output.splitlines()[1:] if "=" in x)
    assert float(out["G       "]) < 1e-3
    assert out["sync    "].strip() == "yes"


def test_solve_physical_inputs(runner):
    r = runner.invoke(main, ["solve", "--p-tx", "0.1", "--slot-seconds", "1e-3", "--frame-seconds", "8e-3",
                             "--range-m", "100", "--density", "0.04"])
    assert r.exit_code == 0, r.output
    assert "L=8 R=4" in r.output
    r = runner.invoke(main, ["solve", "--p-tx", "0.1", "--slot-seconds", "1e-3"])
    assert r.exit_code == 3


def test_sweep_csv_round_trip(runner):
    r = runner.invoke(main, ["sweep", "--L", "16", "--R", "4", "--p-tx", "0.01,0.1,0.3"])
    assert r.exit_code == 0, r.output
    assert r.output.splitlines()[0] == ",".join(SWEEP_COLUMNS)
    table = rows(r.output)
    assert [float(x["p_tx"]) for x in table] == [0.01, 0.1, 0.3]
    assert all(x["status"] == "ok" for x in table)
    again = runner.invoke(main, ["sweep", "--L", "16", "--R", "4", "--p-tx", "0.1", "--format", "json"])
    j = json.loads(again.output)[0]
    for k in SWEEP_COLUMNS[1:-2]:
        assert float(table[1][k]) == j[k]


def test_fmt_round_trips():
    for x in (0.1, 1 / 3, 2.0 ** -1074, 1e300, 123456789.123456789):
        assert float(fmt(x)) == x
    assert fmt(True) == "1" and fmt(None) == ""


def test_sweep_range_and_empty(runner):
    r = runner.invoke(main, ["sweep", "--L", "8", "--R", "2", "--range", "0.01:0.5:4", "--scale", "lin"])
    assert r.exit_code == 0
    assert len(rows(r.output)) == 4
    assert runner.invoke(main, ["sweep", "--p-tx", ""]).exit_code == 2
    assert runner.invoke(main, ["sweep"]).exit_code == 2
    assert runner.invoke(main, ["sweep", "--p-tx", "0.1,2"]).exit_code == 3


def test_sweep_both_mode(runner):
    r = runner.invoke(main, ["sweep", "--mode", "both", "--p-tx", "0.05,0.1", *SMALL_SIM])
    assert r.exit_code == 0, r.output
    assert r.output.splitlines()[0] == ",".join(COMPARISON_COLUMNS)
    table = rows(r.output)
    assert len(table) == 14
    for x in table:
        a, s = float(x["analytic"]), float(x["simulated"])
        assert float(x["rel_error"]) == pytest.approx(abs(a - s) / max(abs(a), 1e-6))


def test_sweep_workers_keep_order(runner):
    args = ["sweep", "--L", "8", "--R", "2", "--p-tx", "0.3,0.01,0.1"]
    one = runner.invoke(main, args)
    two = runner.invoke(main, args + ["--workers", "2"])
    assert one.output == two.output


def test_simulate_same_seed(runner, tmp_path):
    a, b = tmp_path / "a.json", tmp_path / "b.json"
    for p in (a, b):
        r = runner.invoke(main, ["simulate", "--p-tx", "0.1", "--seed", "42", "--out", str(p), *SMALL_SIM])
        assert r.exit_code == 0, r.output
    assert a.read_bytes() == b.read_bytes()


def test_simulate_defaults_and_seed_echo(runner):
    r = runner.invoke(main, ["simulate", "--p-tx", "0.1", "--warmup", "10", "--slots", "200"])
    assert r.exit_code == 0, r.output
    d = json.loads(r.output)
    assert d["config"]["N"] == 800
    assert isinstance(d["seed"], int) and d["config"]["seed"] == d["seed"]


def test_simulate_histograms_and_output_dir(runner, tmp_path, monkeypatch):
    monkeypatch.setenv("HIDDEN_CSMA_OUTPUT_DIR", str(tmp_path))
    r = runner.invoke(main, ["simulate", "--p-tx", "0.2", "--seed", "1", "--out", "rep.json",
                             "--hist-dir", "h", *SMALL_SIM])
    assert r.exit_code == 0, r.output
    assert json.loads((tmp_path / "rep.json").read_text())["seed"] == 1
    for name in ("dtx", "df", "df_thin"):
        assert (tmp_path / "h" / f"{name}.csv").read_text().startswith("k,count,probability")


def test_simulate_invalid(runner):
    r = runner.invoke(main, ["simulate", "--p-tx", "0.1", "--n", "10"])
    assert r.exit_code == 3


VALIDATE_SMALL = ["validate", "--suite", "sim", "--p-tx", "0.1", "--R", "4", "--L", "8", "--seeds", "2",
                  "--n", "100", "--warmup", "2000", "--slots", "40000"]


def test_validate_corrupted_metric_fails(runner):
    r = runner.invoke(main, VALIDATE_SMALL + ["--corrupt", "pi_TX=1.5"])
    assert r.exit_code == 5
    assert "pi_TX" in r.output and "FAIL" in r.output


def test_validate_zero_tolerance_rejected(runner):
    r = runner.invoke(main, VALIDATE_SMALL + ["--tolerance", "0"])
    assert r.exit_code == 3


def test_validate_json_report(runner, tmp_path):
    out = tmp_path / "v.json"
    r = runner.invoke(main, VALIDATE_SMALL + ["--tolerance", "0.5", "--floor", "0.05", "--tv-bound", "0.5",
                                              "--p-of-tol", "0.5", "--alpha", "1e-12", "--out", str(out)])
    d = json.loads(out.read_text())
    assert d["suites"][0]["suite"]
    assert d["passed"] == (r.exit_code == 0)


def test_config_file(runner, tmp_path):
    cfg = tmp_path / "c.ini"
    cfg.write_text("# sweep defaults\nL = 8\nR = 2\np-tx = 0.1,0.2\n")
    r = runner.invoke(main, ["sweep", "--config", str(cfg)])
    assert r.exit_code == 0, r.output
    assert len(rows(r.output)) == 2
    bad = tmp_path / "bad.ini"
    bad.write_text("colour = blue\n")
    assert runner.invoke(main, ["sweep", "--config", str(bad)]).exit_code == 2


def test_version(runner):
    r = runner.invoke(main, ["--version"])
    assert r.exit_code == 0 and "0.1.0" in r.output


def test_config_uses_flag_names(runner, tmp_path):
    cfg = tmp_path / "c.ini"
    cfg.write_text("format = json\nrange = 0.01:0.1:3\nL=8\nR=2\n")
    r = runner.invoke(main, ["sweep", "--config", str(cfg)])
    assert r.exit_code == 0, r.output
    assert len(json.loads(r.output)) == 3
