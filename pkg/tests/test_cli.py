"""CLI surface: exit codes, report schema, determinism, CSV output."""

import json
import subprocess
import sys

import numpy as np
import pytest


def run_cli(*args):
    proc = subprocess.run(
        [sys.executable, "-m", "msl.cli", *args], capture_output=True, text=True
    )
    return proc.returncode, proc.stdout, proc.stderr


class TestAnalyze:
    def test_theorem_case_study(self):
        code, out, _ = run_cli(
            "analyze", "--expr", "exp(-x1^2)*sin(x1)", "--dim", "1",
            "--window", "30", "--no-timings",
        )
        assert code == 0
        doc = json.loads(out)
        assert doc["schema"] == "msl/1"
        flags = doc["classification"]["flags"]
        assert flags["strongly_stable"] is True
        assert flags["infinitesimally_stable"] is False
        assert flags["quasi_proper"] is True
        assert flags["dimca_stable"] is True
        assert doc["classification"]["margins"]["quasi_proper"] > 0

    def test_parabola_all_true(self):
        code, out, _ = run_cli("analyze", "--expr", "x1^2", "--dim", "1",
                               "--window", "5", "--no-timings")
        assert code == 0
        flags = json.loads(out)["classification"]["flags"]
        assert all(v is True for v in flags.values())

    def test_syntax_error_exit_1(self):
        code, _, err = run_cli("analyze", "--expr", "x1^^2", "--dim", "1")
        assert code == 1
        assert "parse error" in err

    def test_usage_error_exit_1(self):
        code, _, _ = run_cli("analyze")
        assert code == 1

    def test_inconclusive_exit_2(self):
        code, out, _ = run_cli("analyze", "--expr", "sin(x1)", "--dim", "1",
                               "--window", "10", "--no-timings")
        assert code == 2

    def test_two_dimensional_sections(self, tmp_path):
        out_path = tmp_path / "r.json"
        code, _, _ = run_cli(
            "analyze", "--expr", "x1^2+x2^2", "--dim", "2", "--window", "3",
            "--out", str(out_path), "--no-timings",
        )
        assert code == 0
        doc = json.loads(out_path.read_text())
        assert "analysis" in doc
        assert doc["analysis"]["gradient_profile"]["verdict"] == "origin_excluded"
        assert len(doc["analysis"]["critical_points"]) == 1


class TestCertify:
    def test_shifted_bowl(self):
        code, out, _ = run_cli(
            "certify", "--expr", "x1^2+x2^2+0.01*x1", "--signs", "0,0",
            "--radius", "0.5", "--no-timings",
        )
        assert code == 0
        cert = json.loads(out)["certificate"]
        assert cert["unique"] is True
        assert abs(cert["location"][0] + 0.005) < 1e-12
        assert cert["grad_residual"] < 1e-9

    def test_saddle_model(self):
        code, out, _ = run_cli(
            "certify", "--expr", "x1^2-x2^2+0.01*x1-0.02*x2", "--signs", "0,1",
            "--radius", "0.5", "--no-timings",
        )
        assert code == 0
        cert = json.loads(out)["certificate"]
        assert cert["morse_index"] == 1

    def test_gate_violation_exit_2(self):
        code, out, _ = run_cli(
            "certify", "--expr", "x1^2+x2^2+x1", "--signs", "0,0",
            "--radius", "0.5", "--no-timings",
        )
        assert code == 2
        assert "hypothesis not met" in json.loads(out)["certificate"]["error"]


class TestNormalize:
    def test_identity_tables(self, tmp_path):
        prefix = str(tmp_path / "tables")
        code, out, _ = run_cli(
            "normalize", "--f", "x1^2", "--g", "x1^2", "--window", "3",
            "--out-csv", prefix, "--no-timings",
        )
        assert code == 0
        doc = json.loads(out)["normalization"]
        assert doc["passed"] is True
        assert doc["residuals"]["c0_residual"] == 0.0
        psi_rows = (tmp_path / "tables_psi.csv").read_text().strip().splitlines()
        header = psi_rows[0].split(",")
        assert header == ["y", "psi"]
        for row in psi_rows[1:]:
            y, p = map(float, row.split(","))
            assert y == p  # identity table

    def test_gated_perturbation_restores(self):
        code, out, _ = run_cli(
            "normalize", "--f", "x1^2", "--g", "x1^2+0.001*exp(-8*x1^2)*(1+x1)",
            "--window", "3", "--no-timings",
        )
        assert code == 0
        res = json.loads(out)["normalization"]["residuals"]
        assert res["critical_location_error"] < 1e-8
        assert res["critical_value_error"] < 1e-8
        assert res["identity_outside_ok"] is True

    def test_oversized_shift_exit_2(self):
        code, out, _ = run_cli(
            "normalize", "--f", "x1^2", "--g", "x1^2+0.2", "--window", "3",
            "--no-timings",
        )
        assert code == 2
        assert "error" in json.loads(out)["normalization"]


class TestGk:
    def test_saddle_row(self):
        code, out, _ = run_cli("gk", "--n", "3", "--k", "1", "--no-timings")
        assert code == 0
        doc = json.loads(out)["gk"]
        assert doc["stable"] is True and doc["quasi_proper"] is False

    def test_proper_row(self):
        code, out, _ = run_cli("gk", "--n", "3", "--k", "0", "--no-timings")
        doc = json.loads(out)["gk"]
        assert doc["proper"] is True and doc["strongly_stable"] is True


class TestTrivialize:
    def test_saddle_flow(self, tmp_path):
        csv = tmp_path / "orbits.csv"
        code, out, _ = run_cli(
            "trivialize", "--expr", "x1^2-x2^2", "--dim", "2", "--q", "1",
            "--R", "5", "--t-min", "0.96", "--t-max", "1.04", "--points", "8",
            "--out-csv", str(csv), "--no-timings",
        )
        assert code == 0
        doc = json.loads(out)["trivialization"]
        assert doc["max_value_residual"] < 1e-6
        assert doc["max_radius_drift"] < 1e-6
        lines = csv.read_text().strip().splitlines()
        assert lines[0].split(",") == ["orbit", "t", "x1", "x2",
                                       "value_residual", "radius_drift"]
        assert len(lines) > 8


class TestPerturb:
    def test_seeded_determinism_byte_identical(self):
        args = ("perturb", "--expr", "x1^3", "--dim", "1", "--trials", "10",
                "--seed", "7", "--no-timings")
        code1, out1, _ = run_cli(*args)
        code2, out2, _ = run_cli(*args)
        assert code1 == code2 == 0
        assert out1 == out2
        assert json.loads(out1)["scan"]["pass_fraction"] >= 0.95

    def test_report_roundtrip(self):
        _, out, _ = run_cli("perturb", "--expr", "x1^2+x2^2", "--dim", "2",
                            "--trials", "3", "--seed", "1", "--no-timings")
        doc = json.loads(out)
        assert json.loads(json.dumps(doc)) == doc
