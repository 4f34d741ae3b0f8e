import math

import numpy as np
import pytest

from sdeweak.config import (
    ConfigError,
    Experiment,
    ExperimentConfig,
    load_config,
    parse_config_text,
)
from sdeweak.harness import (
    ExperimentReport,
    Status,
    _loglog_fit,
    _worse,
    emit_csv,
    emit_plot_script,
    parse_report_csv,
    reference_by_name,
    run_and_emit,
    run_experiment,
)

RATE_TEXT = """
# small rate regression
experiment = rate_regression
drift_name = ou
theta = 1.0
reference_name = gaussian
t = 1.0
delta_levels = 2^-4, 2^-5, 2^-6, 2^-7
n_paths = 2000
seed = 99
test_functions = tanh_ramp
initial = 1.0
"""


class TestConfigParsing:
    def test_full_roundtrip(self):
        cfg = parse_config_text(RATE_TEXT)
        assert cfg.experiment is Experiment.RATE_REGRESSION
        assert cfg.drift_name == "ou"
        assert cfg.T == 1.0
        assert cfg.delta_levels == (2**-4, 2**-5, 2**-6, 2**-7)
        assert cfg.n_paths == 2000
        assert cfg.seed == 99
        assert cfg.drift_params == {"theta": 1.0}

    def test_power_of_two_tokens(self):
        cfg = parse_config_text(
            "experiment = novikov_report\ndrift_name = ou\n"
            "delta_levels = 2^-3\nn_paths = 10\n")
        assert cfg.delta_levels == (0.125,)

    def test_comments_and_blank_lines(self):
        cfg = parse_config_text(
            "# leading comment\n\nexperiment = novikov_report # trailing\n"
            "drift_name = ou\nn_paths = 10\n")
        assert cfg.drift_name == "ou"

    def test_unknown_key_rejected(self):
        with pytest.raises(ConfigError, match="unknown key"):
            parse_config_text("experiment = rate_regression\n"
                              "drift_name = ou\nwibble = 3\n")

    def test_unknown_experiment_rejected(self):
        with pytest.raises(ConfigError, match="unknown experiment"):
            parse_config_text("experiment = nope\ndrift_name = ou\n")

    def test_missing_required_keys(self):
        with pytest.raises(ConfigError, match="experiment"):
            parse_config_text("drift_name = ou\n")
        with pytest.raises(ConfigError, match="drift_name"):
            parse_config_text("experiment = rate_regression\n")

    def test_delta_levels_must_decrease(self):
        with pytest.raises(ConfigError, match="decreasing"):
            parse_config_text("experiment = novikov_report\ndrift_name = ou\n"
                              "delta_levels = 2^-5, 2^-4\n")

    def test_rate_needs_enough_paths(self):
        with pytest.raises(ConfigError, match="1000"):
            parse_config_text("experiment = rate_regression\ndrift_name = ou\n"
                              "n_paths = 10\n")

    def test_delta_exceeding_horizon_rejected(self):
        with pytest.raises(ConfigError, match="horizon"):
            parse_config_text("experiment = novikov_report\ndrift_name = ou\n"
                              "t = 0.5\ndelta_levels = 1.0\n")

    def test_load_config_from_file(self, tmp_path):
        p = tmp_path / "cfg.txt"
        p.write_text(RATE_TEXT)
        cfg = load_config(str(p))
        assert cfg.n_paths == 2000

    def test_reference_params_bucket(self):
        cfg = parse_config_text("experiment = novikov_report\n"
                                "drift_name = ou\nsigma = 2.0\nn_paths = 8\n")
        assert cfg.reference_params == {"sigma": 2.0}


class TestHelpers:
    def test_status_severity(self):
        assert _worse(Status.PASS, Status.FAIL) is Status.FAIL
        assert _worse(Status.INCONCLUSIVE, Status.FAIL) is Status.FAIL
        assert _worse(Status.PASS, Status.INCONCLUSIVE) is Status.INCONCLUSIVE
        assert Status.PASS.exit_code == 0
        assert Status.FAIL.exit_code == 1
        assert Status.INCONCLUSIVE.exit_code == 2

    def test_loglog_fit_recovers_known_slope(self):
        deltas = [2**-k for k in range(3, 9)]
        errors = [3.0 * d**0.75 for d in deltas]
        slope, lo, hi = _loglog_fit(deltas, errors)
        assert slope == pytest.approx(0.75, abs=1e-12)
        assert lo <= 0.75 <= hi

    def test_unknown_reference(self):
        with pytest.raises(ConfigError, match="unknown reference"):
            reference_by_name("lorentz")


class TestCsvEmission:
    def test_empty_report_is_header_only(self, tmp_path):
        rep = ExperimentReport(kind="rate_regression",
                               header=("delta", "f_name"), rows=[],
                               metadata={"seed": 1}, trailing=[],
                               status=Status.PASS)
        path = tmp_path / "empty.csv"
        emit_csv(rep, str(path))
        lines = path.read_text().splitlines()
        assert lines[0] == "# seed=1"
        assert lines[1] == "delta,f_name"
        assert len(lines) == 2

    def test_rate_csv_schema_and_roundtrip(self, tmp_path):
        cfg = parse_config_text(RATE_TEXT)
        report = run_experiment(cfg)
        path = tmp_path / "rate.csv"
        emit_csv(report, str(path))
        metadata, header, rows, trailing = parse_report_csv(str(path))
        assert header == ["delta", "f_name", "weak_error", "weak_stderr",
                          "w1", "wbl_lower", "wbl_upper", "rejected_paths",
                          "diverged_paths"]
        assert len(rows) == 4 * 2    # 4 levels x 2 observables
        assert metadata["experiment"] == "rate_regression"
        # recompute each slope from the emitted rows: must match stored
        for fit in report.slopes:
            ds = [r[0] for r in rows if r[1] == fit.f_name]
            es = [r[2] for r in rows if r[1] == fit.f_name]
            slope, _, _ = _loglog_fit(ds, es)
            assert abs(slope - fit.slope) < 1e-9
        assert any("slope=" in t and "ci=" in t and "pass=" in t
                   for t in trailing)

    def test_plot_script_compiles(self, tmp_path):
        cfg = parse_config_text(RATE_TEXT)
        cfg.output_path = str(tmp_path / "rate.csv")
        report = run_and_emit(cfg)
        script_path = tmp_path / "rate.csv.plot.py"
        assert script_path.exists()
        src = script_path.read_text()
        compile(src, str(script_path), "exec")
        assert "rate.csv" in src
        assert "0.5" in src    # the slope guide line
        assert report.status is Status.PASS


class TestDeterminism:
    def test_identical_runs_byte_identical(self, tmp_path):
        out1, out2 = tmp_path / "a.csv", tmp_path / "b.csv"
        for out in (out1, out2):
            cfg = parse_config_text(RATE_TEXT)
            cfg.output_path = str(out)
            run_and_emit(cfg)
        assert out1.read_bytes() == out2.read_bytes()

    def test_worker_count_does_not_change_bytes(self, tmp_path):
        outs = []
        for workers in (1, 3):
            cfg = parse_config_text(RATE_TEXT)
            cfg.n_paths = 2200   # not a multiple of the block size
            cfg.workers = workers
            cfg.output_path = str(tmp_path / f"w{workers}.csv")
            run_and_emit(cfg)
            outs.append((tmp_path / f"w{workers}.csv").read_bytes())
        assert outs[0] == outs[1]


class TestRateRegression:
    def test_ou_exact_coupled_truth(self):
        cfg = ExperimentConfig(experiment=Experiment.RATE_REGRESSION,
                               drift_name="ou",
                               delta_levels=tuple(2.0**-k for k in range(4, 9)),
                               n_paths=4000, seed=7, initial=(1.0,))
        rep = run_experiment(cfg)
        assert rep.status is Status.PASS
        assert rep.metadata["ground_truth"] == "exact-coupled"
        for fit in rep.slopes:
            assert fit.slope >= 0.5 - 0.15
            assert fit.ci_lo <= fit.slope <= fit.ci_hi

    def test_kinetic_degenerate_all_components(self):
        cfg = ExperimentConfig(experiment=Experiment.RATE_REGRESSION,
                               drift_name="kinetic-ou",
                               delta_levels=tuple(2.0**-k for k in range(4, 9)),
                               n_paths=4000, seed=7, initial=(1.0, 0.0))
        rep = run_experiment(cfg)
        assert rep.status is Status.PASS
        assert len(rep.slopes) == 4   # tanh/ramp per component
        assert all(fit.passed for fit in rep.slopes)

    def test_self_referenced_truth_notes_bias(self):
        cfg = ExperimentConfig(experiment=Experiment.RATE_REGRESSION,
                               drift_name="mollified-singular-log",
                               delta_levels=tuple(2.0**-k for k in range(4, 8)),
                               n_paths=2000, seed=3, initial=(0.5,))
        rep = run_experiment(cfg)
        assert "scheme-at-delta" in rep.metadata["ground_truth"]
        assert "ground_truth_note" in rep.metadata
        assert rep.status is Status.PASS

    def test_rows_carry_counters(self):
        cfg = parse_config_text(RATE_TEXT)
        rep = run_experiment(cfg)
        for row in rep.rows:
            assert row[-2] == 0 and row[-1] == 0


class TestMollifySweep:
    def test_singular_family_monotone(self):
        cfg = ExperimentConfig(experiment=Experiment.MOLLIFY_SWEEP,
                               drift_name="mollified-singular-log",
                               delta_levels=(2.0**-6,),
                               epsilon_levels=(0.4, 0.2, 0.1, 0.05),
                               n_paths=4000, seed=5, initial=(0.5,))
        rep = run_experiment(cfg)
        assert rep.status is Status.PASS
        w1s = [row[1] for row in rep.rows]
        theory = [row[4] for row in rep.rows]
        assert w1s == sorted(w1s, reverse=True)
        assert theory == sorted(theory, reverse=True)
        assert len(rep.rows) == 3    # baseline is not a row

    def test_smooth_drift_within_floor(self):
        # smoothing a linear forcing is exact: all distances at the floor
        cfg = ExperimentConfig(experiment=Experiment.MOLLIFY_SWEEP,
                               drift_name="kinetic-ou",
                               delta_levels=(2.0**-5,),
                               epsilon_levels=(0.4, 0.2, 0.1),
                               n_paths=2000, seed=5, initial=(1.0, 0.0))
        rep = run_experiment(cfg)
        assert rep.status is Status.PASS
        floor = float(rep.metadata["same_law_floor"])
        assert all(row[1] <= 2.0 * floor for row in rep.rows)

    def test_sweep_needs_two_levels(self):
        cfg = ExperimentConfig(experiment=Experiment.MOLLIFY_SWEEP,
                               drift_name="mollified-singular-log",
                               delta_levels=(0.25,), epsilon_levels=(0.4,),
                               n_paths=1000)
        with pytest.raises(ConfigError, match="two epsilon"):
            run_experiment(cfg)

    def test_sweep_undefined_for_plain_ou(self):
        cfg = ExperimentConfig(experiment=Experiment.MOLLIFY_SWEEP,
                               drift_name="ou", delta_levels=(0.25,),
                               epsilon_levels=(0.4, 0.2), n_paths=1000)
        with pytest.raises(ConfigError, match="not defined"):
            run_experiment(cfg)


class TestWeakConvergence:
    def test_gaps_shrink_with_delta(self):
        cfg = ExperimentConfig(experiment=Experiment.WEAK_CONVERGENCE,
                               drift_name="mollified-singular-log",
                               delta_levels=(2.0**-2, 2.0**-4, 2.0**-6, 2.0**-8),
                               n_paths=4000, seed=5, initial=(0.5,))
        rep = run_experiment(cfg)
        assert rep.status is Status.PASS
        gaps = {}
        for row in rep.rows:
            gaps.setdefault(row[1], []).append(row[2])
        # reference paths run at min(delta)/4, so even the finest level
        # leaves a small positive gap; it must sit far below the coarsest
        for seq in gaps.values():
            assert seq[-1] < 0.25 * seq[0]

    def test_degenerate_variant_runs(self):
        cfg = ExperimentConfig(experiment=Experiment.WEAK_CONVERGENCE,
                               drift_name="kinetic-ou",
                               delta_levels=(2.0**-2, 2.0**-4, 2.0**-6),
                               n_paths=3000, seed=8, initial=(1.0, 0.0))
        rep = run_experiment(cfg)
        assert rep.status in (Status.PASS, Status.INCONCLUSIVE)
        assert len(rep.rows) == 3 * 4


class TestCrosscheckAndNovikov:
    def test_crosscheck_passes_on_shipped_pair(self):
        cfg = ExperimentConfig(experiment=Experiment.GIRSANOV_CROSSCHECK,
                               drift_name="mollified-singular-log",
                               delta_levels=(2.0**-6,), n_paths=8000,
                               seed=3, initial=(0.5,))
        rep = run_experiment(cfg)
        assert rep.status is Status.PASS
        for row in rep.rows:
            assert abs(row[9]) <= 4.0 and abs(row[10]) <= 4.0
        assert any("martingale_target_mean" in t for t in rep.trailing)

    def test_novikov_report_status_informational(self):
        cfg = ExperimentConfig(experiment=Experiment.NOVIKOV_REPORT,
                               drift_name="mollified-singular-log",
                               delta_levels=(2.0**-5,), n_paths=1500,
                               seed=3, initial=(0.5,))
        rep = run_experiment(cfg)
        assert rep.status is Status.PASS
        assert len(rep.rows) == 4   # target/scheme x half/full
        kinds = {row[0] for row in rep.rows}
        assert kinds == {"target", "scheme"}
        assert all(math.isfinite(row[2]) for row in rep.rows)
