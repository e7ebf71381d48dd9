import json
import math
import subprocess
import sys

import numpy as np
import pytest

from symlik import cli
from symlik.experiments import (
    EstimatorConfig,
    FactorConfig,
    RegressionConfig,
    ResultTable,
    Table1Config,
    load_flight_groups,
    make_flight_data,
    mape,
    rmse,
    run_estimator_comparison,
    run_factor_experiment,
    run_regression_experiment,
    run_table1,
    write_manifest,
)
from symlik.symbols import load_symbols


def test_rmse_and_mape_by_hand():
    assert rmse([1.0, 2.0], [1.0, 4.0]) == pytest.approx(math.sqrt(2.0))
    assert mape([2.0, -4.0], [1.0, -5.0]) == pytest.approx((0.5 + 0.25) / 2)


def test_result_table_roundtrip(tmp_path):
    t = ResultTable("x")
    t.add({"d": 2}, "mean", 1.5, 0.1)
    t.add({"d": 3}, "mean", 2.5)
    assert t.value("mean", d=3) == 2.5
    with pytest.raises(KeyError):
        t.get("mean", d=4)
    t.to_csv(tmp_path / "x.csv")
    lines = (tmp_path / "x.csv").read_text().splitlines()
    assert lines[0] == "d,metric,value,sd" and lines[1].startswith("2,mean,1.5,0.1")


def test_manifest_hash_is_stable(tmp_path):
    a = write_manifest(tmp_path / "a.json", "t", Table1Config(), 1)
    b = write_manifest(tmp_path / "b.json", "t", Table1Config(), 1)
    c = write_manifest(tmp_path / "c.json", "t", Table1Config(m=5), 1)
    assert a["config_sha256"] == b["config_sha256"] != c["config_sha256"]
    assert json.loads((tmp_path / "a.json").read_text())["config"]["m"] == 20


def test_table1_is_deterministic():
    cfg = Table1Config(rhos=(0.5,), ns=(5,), m=5, replicates=3)
    a, b = run_table1(cfg), run_table1(cfg)
    assert a.rows == b.rows
    assert -1 < a.value("rho_hat", rho=0.5, n=5) < 1


def test_estimator_comparison_small():
    t = run_estimator_comparison(EstimatorConfig(dims=(2,), replicates=4, T=10, M=200, oracle_M=10_000))
    assert t.value("reference", d=2) == pytest.approx(-8.649, abs=0.01)
    assert abs(t.value("sov_oracle", d=2) - t.value("reference", d=2)) < 0.05
    for metric in ("path_mean", "taylor_var", "pois_negative_fraction", "bc_mean", "time_ratio"):
        assert math.isfinite(t.value(metric, d=2))


def test_factor_experiment_small():
    t = run_factor_experiment(FactorConfig(n=2000, iterations=200, replicates=1, M=30))
    assert t.value("sda_negative_fraction", replicate=0) == 0.0
    assert 0 < t.value("sda_accept", replicate=0) < 1
    assert t.value("ratio_time", replicate=0) > 0


def test_flight_data_generator():
    info = load_flight_groups()
    assert len(info["groups"]) == 14
    rows, labels, truth, x2m = make_flight_data(info, (3, 7), 2000, np.random.default_rng(0))
    assert rows.shape[1] == 3 and set(np.unique(labels)) == {0, 1}
    assert truth.intercepts.size == 2 and len(x2m) == 2
    np.testing.assert_allclose(x2m[0], rows[labels == 0, 2].mean())


def test_regression_experiment_small():
    cfg = RegressionConfig(groups=(3,), n_per_group=3000, qs=(0.05, 0.1), iterations=200, M=20, min_count=300,
                           em_rows=2000)
    t = run_regression_experiment(cfg)
    for q in cfg.qs:
        assert t.value("mape", q=q) >= 0 and t.value("time_ratio", q=q) > 0
        assert 0 < t.value("ne_over_n", q=q) < 1
    assert t.value("ne_over_n", q=0.05) < t.value("ne_over_n", q=0.1)


# --- command line --------------------------------------------------------------


def test_cli_symbolize_and_sample(tmp_path, capsys):
    rng = np.random.default_rng(1)
    x = rng.multivariate_normal([0, 0], [[1, 0.5], [0.5, 1]], 500)
    csv = tmp_path / "d.csv"
    np.savetxt(csv, x, delimiter=",", header="a,b", comments="")
    out = tmp_path / "s.json"
    assert cli.main(["symbolize", str(csv), str(out), "--q", "0.01"]) == 0
    (sym,) = load_symbols(out)
    assert sym.n_total == 500 and sym.n_e > 0
    chain_csv = tmp_path / "chain.csv"
    assert cli.main(["sample", str(out), str(chain_csv), "--iterations", "60", "--M", "20"]) == 0
    assert len(chain_csv.read_text().splitlines()) == 61
    assert "acceptance" in capsys.readouterr().out


def test_cli_experiment_writes_table_and_manifest(tmp_path):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"T": 5, "poisson": False}))
    argv = ["estimators", "--out", str(tmp_path), "--dims", "2", "--replicates", "3", "--M", "50", "--config", str(cfg)]
    assert cli.main(argv) == 0
    manifest = json.loads((tmp_path / "estimators.manifest.json").read_text())
    assert manifest["config"]["T"] == 5 and manifest["config"]["M"] == 50
    assert manifest["config"]["poisson"] is False
    assert "path_mean" in (tmp_path / "estimators.csv").read_text()


def test_cli_reports_errors(tmp_path, capsys):
    assert cli.main(["symbolize", str(tmp_path / "missing.csv"), str(tmp_path / "o.json")]) == 1
    assert "error" in capsys.readouterr().err


def test_console_entry_point():
    out = subprocess.run([sys.executable, "-m", "symlik.cli", "--help"], capture_output=True, text=True)
    assert out.returncode == 0
    for sub in ("table1", "estimators", "factor", "regression", "symbolize", "sample"):
        assert sub in out.stdout
