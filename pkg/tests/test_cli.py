import subprocess
import sys

import pytest

from sdeweak.cli import main


SMOKE = """
experiment = rate_regression
drift_name = ou
theta = 1.0
delta_levels = 2^-4, 2^-5, 2^-6, 2^-7
n_paths = 2000
seed = 7
initial = 1.0
"""


class TestCli:
    def test_version(self, capsys):
        assert main(["version"]) == 0
        assert capsys.readouterr().out.strip()

    def test_list_drifts(self, capsys):
        assert main(["list-drifts"]) == 0
        out = capsys.readouterr().out
        for name in ("ou", "singular-log", "mollified-singular-log",
                     "kinetic-ou"):
            assert name in out

    def test_run_smoke_config(self, tmp_path, capsys):
        out_csv = tmp_path / "smoke.csv"
        cfg = tmp_path / "smoke.cfg"
        cfg.write_text(SMOKE + f"output_path = {out_csv}\n")
        assert main(["run", str(cfg)]) == 0
        assert out_csv.exists()
        assert (tmp_path / "smoke.csv.plot.py").exists()
        assert "status: PASS" in capsys.readouterr().out

    def test_run_missing_file_is_config_error(self, capsys):
        assert main(["run", "/nonexistent/path.cfg"]) == 3

    def test_run_malformed_config_is_config_error(self, tmp_path, capsys):
        cfg = tmp_path / "bad.cfg"
        cfg.write_text("experiment = rate_regression\ndrift_name = ou\n"
                       "bogus_key = 1\n")
        assert main(["run", str(cfg)]) == 3

    def test_run_unknown_drift_is_config_error(self, tmp_path, capsys):
        cfg = tmp_path / "bad.cfg"
        cfg.write_text("experiment = rate_regression\ndrift_name = nope\n")
        assert main(["run", str(cfg)]) == 3

    def test_probe_zero_perturbation(self, capsys):
        # drift == reference drift: the probe integrand is exactly one
        code = main(["probe-integrability", "--drift", "ou", "--eta", "1.0"])
        assert code == 0
        out = capsys.readouterr().out
        assert "value = 1" in out
        assert "finite" in out

    def test_probe_singular_drift_small_eta(self, capsys):
        code = main(["probe-integrability", "--drift", "singular-log",
                     "--eta", "0.2", "--quad-points", "16384"])
        assert code == 0

    def test_probe_singular_drift_large_eta_fails(self, capsys):
        code = main(["probe-integrability", "--drift", "singular-log",
                     "--eta", "1.0"])
        assert code == 1
        assert "NOT established" in capsys.readouterr().out

    def test_probe_kinetic_sections(self, capsys):
        code = main(["probe-integrability", "--drift", "kinetic-ou",
                     "--eta", "0.2", "--quad-points", "2048"])
        out = capsys.readouterr().out
        assert "position section" in out
        # each section is finite but the values blow up with |x1|, so the
        # uniform-in-position condition is not established
        assert "NOT established" in out
        assert code == 1

    def test_console_script_entry_point(self):
        proc = subprocess.run([sys.executable, "-m", "sdeweak.cli", "version"],
                              capture_output=True, text=True)
        assert proc.returncode == 0


SWEEP_DEGENERATE = """
experiment = mollify_sweep
drift_name = kinetic-ou
delta_levels = 2^-5
epsilon_levels = 0.4, 0.2
n_paths = 1200
seed = 4
initial = 1.0, 0.0
"""


class TestCliExitCodes:
    def test_pass_exit_zero(self, tmp_path):
        cfg = tmp_path / "s.cfg"
        cfg.write_text(SWEEP_DEGENERATE)
        assert main(["run", str(cfg)]) == 0
