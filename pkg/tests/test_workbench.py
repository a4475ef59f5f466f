from __future__ import annotations

import json

import jsonschema
import numpy as np
import pytest

from ratchetsens.errors import ConfigError
from ratchetsens.program import make_experiment_program
from ratchetsens.sensitivity import NoiseModel, SobolConfig
from ratchetsens.simulator import simulate_record
from ratchetsens.workbench import (
    DiagnosticsReport,
    RunConfig,
    diagnostics_schema,
    emit_reports,
    fit_reports,
    generate_synthetic_experiment,
    noise_coefficients,
    run_validation,
)
from ratchetsens.workbench.cli import EXIT_CONFIG, EXIT_OK, main
from ratchetsens.workbench.reports import (
    read_cloud_csv,
    read_fit_csv,
    read_matrix_csv,
    read_params,
    read_series,
    write_matrix_csv,
    write_params,
)

from conftest import af_params, ow2_params


def _config(tmp_path, **extra) -> dict:
    cfg = {
        "model": {"family": "AF", "n_branches": 2},
        "experiments": [
            {"name": "T1", "sigma_m": 420, "sigma_a_max": 470, "n_cycles": 8, "amplitude_start_fraction": 1.0},
            {"name": "T2", "sigma_m": 0, "sigma_a_max": 650, "n_cycles": 8, "amplitude_start_fraction": 1.0},
            {"name": "V1", "sigma_m": 200, "sigma_a_max": 500, "n_cycles": 8, "role": "validation"},
        ],
        "truth": "truth.json",
        "initial": "p0.json",
        "noise": {"sigma": 1e-6, "n_modes": 3},
        "sobol": {"dimensions": 6, "n_draws": 300},
        "metric_program": {"n_cycles": 8},
        "identification": {"skip_nested": True, "refine": {"max_iter": 60}},
        "diagnostics": {"branches": [2], "initial": {"2": "p0.json"}},
    }
    cfg.update(extra)
    p = af_params(2)
    write_params(tmp_path / "truth.json", p)
    write_params(tmp_path / "p0.json", p.with_values(K=410.0, c=(2100.0, 39000.0)))
    path = tmp_path / "run.json"
    path.write_text(json.dumps(cfg))
    return path


class TestConfig:
    def test_load_and_resolve(self, tmp_path):
        cfg = RunConfig.load(_config(tmp_path))
        assert [e.name for e in cfg.train()] == ["T1", "T2"]
        assert [e.name for e in cfg.held_out()] == ["V1"]
        assert cfg.record_path(cfg.experiments[0]) == tmp_path / "out" / "T1.csv"
        assert cfg.sobol_config().dimensions == 6
        assert cfg.load_params("truth.json") == af_params(2)

    def test_unknown_keys_rejected(self, tmp_path):
        with pytest.raises(ConfigError, match="colour"):
            RunConfig.from_dict({"colour": 1})
        with pytest.raises(ConfigError, match="nodes"):
            RunConfig.from_dict({"solver": {"nodes": 3}})

    def test_inconsistent_settings(self, tmp_path):
        with pytest.raises(ConfigError):
            RunConfig.from_dict({"experiments": [{"name": "a", "sigma_m": 1, "sigma_a_max": 1, "n_cycles": 2}] * 2})
        with pytest.raises(ConfigError):
            RunConfig.from_dict({"model": {"family": "XX"}})
        with pytest.raises(ConfigError):
            RunConfig.from_dict({"identification": {"refine": {"grad_tol": 0.0}}})
        cfg = RunConfig.load(_config(tmp_path, sobol={"dimensions": 5}))
        with pytest.raises(ConfigError):
            cfg.sobol_config()

    def test_model_mismatch(self, tmp_path):
        cfg = RunConfig.load(_config(tmp_path))
        write_params(tmp_path / "ow.json", ow2_params(2))
        with pytest.raises(ConfigError):
            cfg.load_params("ow.json")
        with pytest.raises(ConfigError):
            cfg.load_params("missing.json")


class TestSynthetic:
    def test_clean_and_noisy(self, af2):
        prog = make_experiment_program(420.0, 470.0, 6)
        clean = generate_synthetic_experiment(af2, prog)
        assert np.array_equal(clean.vector(), simulate_record(af2, prog).vector())
        sob = SobolConfig(dimensions=4, n_draws=10)
        noisy = generate_synthetic_experiment(af2, prog, NoiseModel(1e-6, 4), sob, draw=3)
        diff = noisy.vector() - clean.vector()
        assert 0.0 < np.max(np.abs(diff)) < 1e-5
        assert noisy.metadata["noise_coefficients"] == list(noise_coefficients(NoiseModel(1e-6, 4), sob, 3))

    def test_coefficient_range(self):
        with pytest.raises(ValueError):
            noise_coefficients(NoiseModel(1e-6, 4), SobolConfig(dimensions=4), column=2)

    def test_validation_without_tests_is_flagged(self, af2):
        res = run_validation(af2, [])
        assert res.flagged and float(res) == 0.0


class TestReports:
    def test_params_round_trip(self, tmp_path, ow1):
        write_params(tmp_path / "p.json", ow1)
        assert read_params(tmp_path / "p.json") == ow1

    def test_matrix_round_trip(self, tmp_path):
        M = np.random.default_rng(0).normal(size=(3, 3))
        write_matrix_csv(tmp_path / "m.csv", ["a", "b", "c"], M)
        names, back = read_matrix_csv(tmp_path / "m.csv")
        assert names == ("a", "b", "c") and np.array_equal(back, M)

    def test_fit_and_plot_files(self, tmp_path, af2):
        prog = make_experiment_program(420.0, 470.0, 5)
        rec = simulate_record(af2, prog)
        fits = fit_reports(af2, [("T1", prog, rec)])
        emit_reports(tmp_path, fits=fits)
        table = read_fit_csv(tmp_path / "fit.csv")["T1"]
        assert table.shape == (5, 7) and np.all(table[:, 3] == 0.0)
        cyc, strain = read_series(tmp_path / "plots" / "T1_model_max_strain.csv")
        assert np.array_equal(cyc, np.arange(1, 6)) and np.array_equal(strain, rec.max_strain)

    def test_diagnostics_criteria(self):
        rep = DiagnosticsReport.build(
            "AF", {2: 1.0, 3: 0.5, 4: 0.49}, {2: 2.0, 3: 1.0, 4: 1.5}, {2: 0.9, 3: 0.99, 4: 0.9999},
            {2: 1e-5, 3: None, 4: 2e-3}, rank_deficient={3: {"column": 4, "name": "c3", "diag_ratio": 1e-13}},
        )
        assert rep.fit.flagged_sizes == (4,)
        assert rep.validation.flagged_sizes == (4,)
        assert rep.correlation.flagged_sizes == (4,)
        assert rep.cloud.flagged_sizes == (3, 4)
        assert rep.hard_flag
        jsonschema.validate(rep.to_dict(), diagnostics_schema())

    def test_schema_rejects_malformed(self):
        rep = DiagnosticsReport.build("AF", {2: 1.0}, {}, {2: 0.5}, {2: 1e-6}).to_dict()
        jsonschema.validate(rep, diagnostics_schema())
        del rep["criteria"]["III"]
        with pytest.raises(jsonschema.ValidationError):
            jsonschema.validate(rep, diagnostics_schema())


class TestCommandLine:
    def test_full_workflow(self, tmp_path, capsys):
        cfg = str(_config(tmp_path))
        out = tmp_path / "out"
        assert main(["--config", cfg, "synth"]) == EXIT_OK
        assert (out / "T1.csv").exists() and (out / "V1.json").exists()
        assert main(["--config", cfg, "identify"]) == EXIT_OK
        ident = json.loads((out / "identification.json").read_text())
        assert ident["phi"] < ident["phi_start"]
        assert main(["--config", cfg, "sensitivity"]) == EXIT_OK
        first = (out / "cloud.csv").read_bytes()
        names, draws, dist = read_cloud_csv(out / "cloud.csv")
        assert draws.shape == (300, len(names)) and np.all(dist >= 0)
        assert main(["--config", cfg, "sensitivity", "--workers", "3"]) == EXIT_OK
        assert (out / "cloud.csv").read_bytes() == first
        assert main(["--config", cfg, "correlate"]) == EXIT_OK
        assert "max |Corr|" in capsys.readouterr().out
        assert main(["--config", cfg, "validate"]) == EXIT_OK
        assert main(["--config", cfg, "simulate"]) == EXIT_OK
        assert (out / "metric_trace.csv").exists()
        assert main(["--config", cfg, "diagnose"]) == EXIT_OK
        jsonschema.validate(json.loads((out / "diagnostics.json").read_text()), diagnostics_schema())

    def test_config_errors_exit_with_code(self, tmp_path, capsys):
        cfg = str(_config(tmp_path))
        assert main(["--config", cfg, "identify"]) == EXIT_CONFIG
        assert "missing input file" in capsys.readouterr().err
        assert main(["--config", str(tmp_path / "nope.json"), "synth"]) == EXIT_CONFIG
        assert main(["--config", cfg, "simulate", "--experiment", "T9"]) == EXIT_CONFIG

    def test_synth_is_reproducible(self, tmp_path):
        cfg = str(_config(tmp_path))
        main(["--config", cfg, "synth", "--draw", "2"])
        a = (tmp_path / "out" / "T2.csv").read_bytes()
        main(["--config", cfg, "--out", str(tmp_path / "again"), "synth", "--draw", "2"])
        assert (tmp_path / "again" / "T2.csv").read_bytes() == a
