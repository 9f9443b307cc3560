from __future__ import annotations

import csv
import json
import math

import pytest

from bayes_qcd.cli import EXIT_CONFIG, EXIT_OK, EXIT_REFUSED, main
from bayes_qcd.config import ConfigError, load_config, parse_config
from bayes_qcd.detect import ThresholdPolicy
from bayes_qcd.models import ExpModel
from bayes_qcd.prior import GeometricPrior
from bayes_qcd.renewal import add_approx, Order, pfa_corrected
from bayes_qcd.simulate import ChangePointMode, run_trial

BASE = {"model": {"kind": "exponential", "Q": 1.0}, "prior": {"kind": "geometric", "rho": 0.1}}


def write_config(tmp_path, **fields):
    path = tmp_path / "run.json"
    path.write_text(json.dumps({**BASE, **fields}))
    return path


def read_csv(path):
    lines = [line for line in path.read_text().splitlines() if not line.startswith("#")]
    return list(csv.DictReader(lines))


def run(tmp_path, command, *extra, **fields):
    cfg = write_config(tmp_path, **fields)
    out = tmp_path / "out"
    code = main([command, "--config", str(cfg), "--out", str(out), *extra])
    return code, out


class TestConfig:
    def test_threshold_required(self):
        with pytest.raises(ConfigError, match="exactly one of 'alpha' and 'A'"):
            parse_config(BASE)

    def test_both_thresholds_rejected(self):
        with pytest.raises(ConfigError, match="alpha/A"):
            parse_config({**BASE, "alpha": 0.01, "A": 100.0})

    def test_missing_model_key_named(self):
        with pytest.raises(ConfigError, match="model: missing key 'Q'"):
            parse_config({**BASE, "model": {"kind": "exponential"}, "alpha": 0.01})

    def test_unknown_field(self):
        with pytest.raises(ConfigError, match="threshold"):
            parse_config({**BASE, "alpha": 0.01, "threshold": 3})

    def test_explicit_A_with_correction_rejected(self):
        with pytest.raises(ConfigError, match="calibration"):
            parse_config({**BASE, "A": 100.0, "calibration": "overshoot_corrected"})

    def test_bad_change_point(self):
        with pytest.raises(ConfigError, match="change_point"):
            parse_config({**BASE, "alpha": 0.01, "change_point": 0})

    def test_override_and_hash(self):
        a = parse_config({**BASE, "alpha": 0.01}, seed=5)
        b = parse_config({**BASE, "alpha": 0.01, "seed": 5})
        assert a.seed == 5 and a.config_hash() == b.config_hash()
        assert a.config_hash() != parse_config({**BASE, "alpha": 0.01}).config_hash()

    def test_invalid_json(self, tmp_path):
        p = tmp_path / "bad.json"
        p.write_text("{")
        with pytest.raises(ConfigError, match="invalid JSON"):
            load_config(p)


class TestCalibrate:
    def test_conservative(self, tmp_path, capsys):
        code, out = run(tmp_path, "calibrate", alpha=0.01)
        assert code == EXIT_OK
        result = json.loads((out / "calibrate.json").read_text())["result"]
        assert result["A"] == pytest.approx(100.0) and result["calibration"] == "conservative"
        assert json.loads(capsys.readouterr().out)["A"] == pytest.approx(100.0)

    def test_corrected_estimates_zeta(self, tmp_path):
        code, out = run(
            tmp_path, "calibrate", alpha=0.01, calibration="overshoot_corrected", overshoot_b=20, overshoot_trials=4000
        )
        assert code == EXIT_OK
        result = json.loads((out / "calibrate.json").read_text())["result"]
        # zeta = 1 / (1 + Q) = 0.5 for the exponential model, so A near 200
        z = result["overshoot"]
        assert abs(z["zeta_hat"] - 0.5) < 4 * z["se_zeta"]
        assert result["A"] == pytest.approx(1 / (0.01 * z["zeta_hat"]))

    def test_corrected_with_given_zeta(self, tmp_path):
        code, out = run(tmp_path, "calibrate", alpha=0.01, calibration="overshoot_corrected", zeta=0.5)
        assert code == EXIT_OK
        assert json.loads((out / "calibrate.json").read_text())["result"]["A"] == pytest.approx(200.0)

    def test_missing_threshold_exit_code(self, tmp_path, capsys):
        code, _ = run(tmp_path, "calibrate")
        assert code == EXIT_CONFIG
        assert "alpha" in capsys.readouterr().err

    def test_missing_config_file(self, tmp_path, capsys):
        assert main(["calibrate", "--config", str(tmp_path / "nope.json")]) == EXIT_CONFIG
        assert "cannot read" in capsys.readouterr().err


class TestSimulate:
    def test_pfa_campaign(self, tmp_path):
        code, out = run(tmp_path, "simulate", A=100.0, campaign="pfa", n_trials=500, horizon=5000, seed=3)
        assert code == EXIT_OK
        (row,) = read_csv(out / "simulate.csv")
        assert row["metric"] == "PFA_global" and int(row["n_trials"]) == 500
        assert 0.0 <= float(row["value"]) <= 0.05

    def test_moment_rows(self, tmp_path):
        code, out = run(tmp_path, "simulate", A=50.0, campaign="add", m_list=[1, 2], n_trials=300, change_point="prior")
        assert code == EXIT_OK
        metrics = [r["metric"] for r in read_csv(out / "simulate.csv")]
        assert {"ADD", "D2", "FalseAlarmRate", "StopRate"} <= set(metrics)

    def test_cond_add_rows(self, tmp_path):
        code, out = run(tmp_path, "simulate", A=50.0, campaign="cond_add", k_list=[1, 3], n_trials=200)
        assert code == EXIT_OK
        rows = read_csv(out / "simulate.csv")
        assert [(r["metric"], r["param"]) for r in rows] == [("CondADD(1)", "1"), ("CondADD(3)", "3")]

    def test_provenance_header(self, tmp_path):
        _, out = run(tmp_path, "simulate", A=50.0, campaign="pfa", n_trials=100, horizon=1000, seed=9)
        head = (out / "simulate.csv").read_text().splitlines()
        assert any(line.startswith("# config_sha256: ") for line in head)
        assert "# seed: 9" in head

    def test_byte_identical_rerun(self, tmp_path):
        fields = dict(A=50.0, campaign="add", m_list=[1, 2], n_trials=200, seed=4, change_point="prior")
        _, out = run(tmp_path, "simulate", **fields)
        first = ((out / "simulate.csv").read_bytes(), (out / "simulate.json").read_bytes())
        _, out = run(tmp_path, "simulate", "--threads", "2", **fields)
        assert ((out / "simulate.csv").read_bytes(), (out / "simulate.json").read_bytes()) == first

    def test_seed_flag_changes_output(self, tmp_path):
        fields = dict(A=50.0, campaign="pfa", n_trials=300, horizon=2000)
        _, out = run(tmp_path, "simulate", **fields)
        first = (out / "simulate.json").read_text()
        _, out = run(tmp_path, "simulate", "--seed", "77", **fields)
        doc = json.loads((out / "simulate.json").read_text())
        assert doc["provenance"]["seed"] == 77 and doc != json.loads(first)

    def test_refusal_exit_code(self, tmp_path, capsys):
        point_mass = {"kind": "tabulated", "weights": [1.0]}
        code, _ = run(tmp_path, "simulate", A=1e6, campaign="add", n_trials=150, horizon=3, prior=point_mass)
        assert code == EXIT_REFUSED
        assert "refused" in capsys.readouterr().err

    def test_short_horizon_is_config_error(self, tmp_path):
        code, _ = run(tmp_path, "simulate", A=50.0, campaign="add", change_point="prior", n_trials=200, horizon=20)
        assert code == EXIT_CONFIG


class TestTrace:
    def test_stop_matches_run_trial(self, tmp_path):
        code, out = run(tmp_path, "trace", A=200.0, seed=12, change_point=5, horizon=4000)
        assert code == EXIT_OK
        rows = read_csv(out / "trace.csv")
        assert [int(r["stopped"]) for r in rows] == [0] * (len(rows) - 1) + [1]
        assert float(rows[-1]["log_G_n"]) >= math.log(200.0) > max(float(r["log_G_n"]) for r in rows[:-1])
        rec = run_trial(ExpModel(1.0), GeometricPrior(0.1), ThresholdPolicy(200.0), ChangePointMode.fixed(5), 4000, seed=12)
        assert int(rows[-1]["n"]) == rec.stop_step == len(rows)

    def test_posterior_consistent_with_threshold(self, tmp_path):
        _, out = run(tmp_path, "trace", A=200.0, seed=1, change_point=3, horizon=4000)
        rows = read_csv(out / "trace.csv")
        for r in rows:
            crossed = float(r["posterior"]) >= float(r["posterior_threshold"])
            assert crossed == bool(int(r["stopped"]))

    def test_no_change_posterior_small(self, tmp_path):
        code, out = run(tmp_path, "trace", "--k", "none", A=1e8, seed=2, horizon=300)
        assert code == EXIT_OK
        rows = read_csv(out / "trace.csv")
        assert len(rows) == 300 and not any(int(r["stopped"]) for r in rows)
        # without a change the posterior only reflects the prior drift toward 1
        assert max(float(r["posterior"]) for r in rows[:5]) < 0.6
        assert json.loads((out / "trace.json").read_text())["result"]["change_point"] is None


class TestApprox:
    def test_columns(self, tmp_path):
        code, out = run(tmp_path, "approx", alpha=0.01, A_grid=[200.0, 1e4])
        assert code == EXIT_OK
        rows = read_csv(out / "approx.csv")
        assert [float(r["A"]) for r in rows] == [200.0, 1e4]
        I, C = ExpModel(1.0).kl_number, GeometricPrior(0.1).entropy_constant()
        for r in rows:
            A = float(r["A"])
            assert float(r["fo_add"]) < float(r["ho_add"])
            assert float(r["ho_add"]) == pytest.approx(add_approx(A, I, C, 1.0, Order.HIGHER_ORDER), rel=1e-12)
            assert float(r["pfa_corrected"]) == pytest.approx(pfa_corrected(A, 0.5), rel=1e-12)
        assert json.loads((out / "approx.json").read_text())["result"]["overshoot_source"] == "exact"


class TestCompare:
    def test_requires_B(self, tmp_path, capsys):
        code, _ = run(tmp_path, "compare", A=100.0, n_trials=200)
        assert code == EXIT_CONFIG
        assert "shiryaev_B" in capsys.readouterr().err

    def test_rows(self, tmp_path):
        code, out = run(tmp_path, "compare", A=100.0, shiryaev_B=0.99, n_trials=300, change_point="prior")
        assert code == EXIT_OK
        params = [r["param"] for r in read_csv(out / "compare.csv")]
        assert params == ["tau_A", "tau_A", "nu_B", "nu_B"]


def test_module_entry_point():
    import subprocess
    import sys

    res = subprocess.run([sys.executable, "-m", "bayes_qcd", "--version"], capture_output=True, text=True)
    assert res.returncode == 0 and "bayes-qcd" in res.stdout
