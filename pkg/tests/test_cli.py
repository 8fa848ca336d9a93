import json
import os

import numpy as np
import pytest

from vixvolterra.cli import main

BERGOMI = {
    "kernel": {"type": "power_law", "alpha": 0.2, "hurst": 0.1},
    "curve": {"flat": 0.04},
    "maturity": 1.0,
    "vix_window_days": 30,
    "day_count": 300,
}
MODULATED = {
    "kernel": {"type": "power_law", "alpha": 0.2, "hurst": 0.1},
    "curve": {"flat": 0.013},
    "modulator": {"type": "levy_ou", "lambda": 0.08, "Lambda": 0.71,
                  "a": 6.18, "gamma0": 0.05},
    "maturity_days": 7,
}
DATA = os.path.join(os.path.dirname(__file__), "..", "data",
                    "synthetic_quotes.csv")


@pytest.fixture
def bergomi_path(tmp_path):
    path = tmp_path / "bergomi.json"
    path.write_text(json.dumps(BERGOMI))
    return str(path)


@pytest.fixture
def modulated_path(tmp_path):
    path = tmp_path / "modulated.json"
    path.write_text(json.dumps(MODULATED))
    return str(path)


def run(capsys, argv):
    code = main(argv)
    out = capsys.readouterr().out
    return code, json.loads(out) if out.strip().startswith("{") else out


class TestPrice:
    def test_smoke(self, capsys, bergomi_path):
        code, payload = run(capsys, [
            "price", "--model", bergomi_path, "--strike", "0",
            "--scheme", "trapezoid", "--n", "30", "--paths", "4000",
            "--seed", "1", "--workers", "1"])
        assert code == 0
        assert 0.0 < payload["estimate"] <= 0.2
        assert payload["std_error"] >= 0.0
        assert payload["n"] == 30 and payload["scheme"] == "trapezoid"

    def test_negative_strike_exit_2(self, capsys, bergomi_path):
        code = main(["price", "--model", bergomi_path, "--strike", "-1",
                     "--paths", "4000", "--workers", "1"])
        capsys.readouterr()
        assert code == 2

    def test_missing_model_exit_4(self, capsys, tmp_path):
        code = main(["price", "--model", str(tmp_path / "nope.json"),
                     "--strike", "0.1", "--workers", "1"])
        capsys.readouterr()
        assert code == 4

    def test_fourier_engine(self, capsys, modulated_path):
        code, payload = run(capsys, [
            "price", "--model", modulated_path, "--strike", "0.11",
            "--engine", "fourier", "--workers", "1"])
        assert code == 0
        assert payload["engine"] == "fourier"
        assert payload["estimate"] > 0.0

    def test_infeasible_model_exit_2(self, capsys, tmp_path):
        cfg = dict(MODULATED)
        cfg["kernel"] = {"type": "power_law", "alpha": 1.0, "hurst": 0.1}
        path = tmp_path / "bad.json"
        path.write_text(json.dumps(cfg))
        code = main(["price", "--model", str(path), "--strike", "0.11",
                     "--paths", "4000", "--workers", "1"])
        capsys.readouterr()
        assert code == 2


class TestConvergence:
    def test_csv_and_slope(self, capsys, bergomi_path, tmp_path):
        out = str(tmp_path / "conv")
        code, payload = run(capsys, [
            "convergence", "--model", bergomi_path, "--n-list", "5,10,20",
            "--reference-n", "160", "--paths", "6000", "--seed", "2",
            "--out", out, "--workers", "1", "--no-plot"])
        assert code == 0
        assert payload["slope"] is not None
        text = open(os.path.join(out, "convergence.csv")).read().splitlines()
        assert text[0] == ("n,price,std_error,abs_error,error_ci_lo,"
                           "error_ci_hi,used_in_fit")
        assert len(text) == 4
        assert os.path.exists(os.path.join(out, "run_manifest.json"))

    def test_single_n_slope_omitted(self, capsys, bergomi_path):
        code, payload = run(capsys, [
            "convergence", "--model", bergomi_path, "--n-list", "5",
            "--reference-n", "40", "--paths", "2000", "--seed", "2",
            "--workers", "1"])
        assert code == 0
        assert payload["slope"] is None
        assert "note" in payload

    def test_bad_reference_exit_2(self, capsys, bergomi_path):
        code = main(["convergence", "--model", bergomi_path, "--n-list",
                     "5,10", "--reference-n", "10", "--paths", "2000",
                     "--workers", "1"])
        capsys.readouterr()
        assert code == 2


class TestSmile:
    def test_fourier_smile_csv(self, capsys, modulated_path, tmp_path):
        out = str(tmp_path / "smile")
        code, payload = run(capsys, [
            "smile", "--model", modulated_path, "--engine", "fourier",
            "--moneyness", "0.9,1.1,5", "--out", out, "--workers", "1",
            "--no-plot"])
        assert code == 0
        assert len(payload["strikes"]) == 5
        lines = open(os.path.join(out, "smile.csv")).read().splitlines()
        assert lines[0] == "strike,price,implied_vol,flag"
        assert len(lines) == 6

    def test_mc_smile_pure_model(self, capsys, bergomi_path):
        code, payload = run(capsys, [
            "smile", "--model", bergomi_path, "--engine", "mc",
            "--moneyness", "0.9,1.1,3", "--paths", "20000", "--n", "30",
            "--seed", "4", "--workers", "1"])
        assert code == 0
        assert payload["vol_spread"] < 0.02


class TestHedge:
    def test_toy_model_closed_form(self, capsys, tmp_path):
        from scipy.stats import norm
        path = tmp_path / "toy.json"
        path.write_text(json.dumps({
            "toy": {"forward_variance": 0.04, "variance_slope": 0.01,
                    "maturity": 1.0}}))
        code, payload = run(capsys, [
            "hedge", "--model", str(path), "--strike", "0.04",
            "--workers", "1"])
        assert code == 0
        weight = payload["weights"]["instantaneous_variance_swap"]
        assert weight == pytest.approx(norm.cdf(0.1), abs=1e-12)

    def test_volterra_single_swap(self, capsys, bergomi_path):
        code, payload = run(capsys, [
            "hedge", "--model", bergomi_path, "--strike", "0.18",
            "--paths", "8000", "--n", "20", "--scheme", "rectangle",
            "--no-control-variate", "--seed", "5", "--workers", "1"])
        assert code == 0
        assert len(payload["instruments"]) == 1
        assert abs(payload["residual_risk"]) <= \
            3.0 * payload["std_errors"]["residual_risk"] + 1e-12


class TestCalibrateCommand:
    def test_bundled_quotes_single_slice(self, capsys, tmp_path,
                                         modulated_path):
        # restrict the bundled file to the 7d slice for speed
        quotes7 = tmp_path / "q7.csv"
        with open(DATA) as src:
            lines = [line for line in src.read().splitlines()
                     if line.startswith(("maturity_days", "7,"))]
        quotes7.write_text("\n".join(lines) + "\n")
        out = str(tmp_path / "calib")
        start = json.dumps({"lambda": 0.08, "Lambda": 0.71, "a": 6.18,
                            "gamma0": 0.05, "xi0": 0.013})
        code, payload = run(capsys, [
            "calibrate", "--model", modulated_path, "--quotes",
            str(quotes7), "--mode", "per_slice", "--multistart", "1",
            "--seed", "6", "--start", start, "--out", out, "--workers", "1",
            "--no-plot"])
        assert code == 0
        assert payload["per_maturity_rmse"]["7"] < 0.005
        assert os.path.exists(os.path.join(out, "calibration.json"))
        table = open(os.path.join(out, "calibration_table.txt")).read()
        assert "maturity_days" in table and "| error" in table.splitlines()[0]


class TestDeterminism:
    def test_same_seed_different_workers_identical(self, capsys,
                                                   bergomi_path, tmp_path):
        argv = ["price", "--model", bergomi_path, "--strike", "0.1",
                "--paths", "8000", "--n", "20", "--seed", "11"]
        code1, p1 = run(capsys, argv + ["--workers", "1"])
        code2, p2 = run(capsys, argv + ["--workers", "2"])
        assert code1 == code2 == 0
        assert p1 == p2

    def test_output_files_byte_identical(self, capsys, bergomi_path,
                                         tmp_path):
        outs = []
        for i, workers in enumerate(("1", "2")):
            out = str(tmp_path / f"conv{i}")
            code, _ = run(capsys, [
                "convergence", "--model", bergomi_path, "--n-list", "5,10",
                "--reference-n", "80", "--paths", "4096", "--seed", "3",
                "--out", out, "--workers", workers, "--no-plot"])
            assert code == 0
            outs.append(out)
        a = open(os.path.join(outs[0], "convergence.csv"), "rb").read()
        b = open(os.path.join(outs[1], "convergence.csv"), "rb").read()
        assert a == b
        ja = json.load(open(os.path.join(outs[0], "run_manifest.json")))
        jb = json.load(open(os.path.join(outs[1], "run_manifest.json")))
        assert ja["config_digest"] == jb["config_digest"]
