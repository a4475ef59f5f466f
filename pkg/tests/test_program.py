from __future__ import annotations

import numpy as np
import pytest

from ratchetsens.errors import ConfigError
from ratchetsens.program import (
    HarmonicCycles,
    Hold,
    LoadingProgram,
    MonotonicRamp,
    PulsatingCycles,
    StageDurations,
    Unload,
    make_experiment_program,
    make_metric_program,
)


class TestExperimentProgram:
    def test_stages(self):
        prog = make_experiment_program(420.0, 470.0, 5)
        kinds = [type(s) for s in prog.segments]
        assert kinds == [MonotonicRamp, Hold, HarmonicCycles, Unload]
        assert prog.n_cycles == 5
        assert prog.duration == pytest.approx(60 + 30 + 5 + 60)
        assert prog.metadata["peak_stress"] == 890.0

    def test_stress_is_continuous(self):
        prog = make_experiment_program(300.0, 200.0, 3)
        t = np.linspace(0.0, prog.duration, 20001)
        s = prog.stress(t)
        bound = np.max(np.abs(prog.stress_rate(t))) * (t[1] - t[0])
        assert np.max(np.abs(np.diff(s))) <= 1.01 * bound
        assert s[0] == 0.0 and abs(s[-1]) < 1e-9

    def test_amplitude_ramps_to_maximum(self):
        prog = make_experiment_program(100.0, 600.0, 4, amplitude_start_fraction=0.25)
        grid = prog.discretize()
        peaks = grid.stress[grid.turning_nodes[0::2]]
        lows = grid.stress[grid.turning_nodes[1::2]]
        amp = 0.5 * (peaks - lows)
        assert np.all(np.diff(amp) > 0)
        assert 100.0 + 600.0 * 0.25 < peaks[0] < peaks[-1] < 700.0 + 1e-9

    def test_turning_nodes_hit_extremes(self):
        prog = make_experiment_program(200.0, 100.0, 3, amplitude_start_fraction=1.0)
        grid = prog.discretize(nodes_per_cycle=8)
        assert np.allclose(grid.stress[grid.turning_nodes[0::2]], 300.0)
        assert np.allclose(grid.stress[grid.turning_nodes[1::2]], 100.0)
        # constant amplitude: extrema sit exactly on the quarter points
        assert np.array_equal(grid.turning_times[:2], [0.25, 0.75])
        assert grid.n_nodes == 1 + 40 + 4 + 3 * 8 + 40
        assert grid.cyclic_duration == pytest.approx(3.0)

    def test_stress_ceiling(self):
        with pytest.raises(ConfigError):
            make_experiment_program(500.0, 500.0, 3, stress_ceiling=900.0)

    def test_bad_inputs(self):
        with pytest.raises(ConfigError):
            make_experiment_program(100.0, 100.0, 0)
        with pytest.raises(ConfigError):
            make_experiment_program(100.0, -1.0, 3)
        with pytest.raises(ConfigError):
            make_experiment_program(100.0, 100.0, 3).discretize(nodes_per_cycle=6)

    def test_custom_durations(self):
        prog = make_experiment_program(100.0, 100.0, 2, StageDurations(ramp=10.0, hold=0.0, period=2.0, unload=5.0))
        assert prog.duration == pytest.approx(10 + 0 + 4 + 5)


class TestMetricProgram:
    def test_pulsating_peaks(self):
        prog = make_metric_program(4, 800.0)
        grid = prog.discretize()
        peaks = grid.stress[grid.turning_nodes[0::2]]
        assert np.allclose(grid.stress[grid.turning_nodes[1::2]], 0.0, atol=1e-9)
        # a growing envelope pushes each peak past mid-cycle
        assert np.all(peaks > 800.0 * (np.arange(4) + 0.5) / 4)
        assert np.all(np.diff(peaks) > 0)
        t_hi = grid.time[grid.turning_nodes[0::2]]
        assert np.max(np.abs(prog.stress_rate(t_hi))) < 1e-8

    def test_extrema_are_grid_nodes_at_any_resolution(self):
        prog = make_experiment_program(420.0, 470.0, 3)
        coarse = prog.discretize(nodes_per_cycle=8)
        fine = prog.discretize(nodes_per_cycle=16)
        assert np.array_equal(coarse.turning_times, fine.turning_times)
        assert np.all(np.isin(coarse.time, fine.time))
        assert np.all(np.diff(fine.time) > 0)

    def test_rate_matches_finite_difference(self):
        seg = PulsatingCycles(100.0, 800.0, 3, 1.0)
        tau = np.linspace(0.01, 2.99, 50)
        h = 1e-6
        fd = (seg.stress_at(tau + h) - seg.stress_at(tau - h)) / (2 * h)
        assert np.allclose(seg.rate(tau), fd, rtol=1e-6, atol=1e-4)


class TestProgramValidation:
    def test_discontinuity_rejected(self):
        with pytest.raises(ConfigError):
            LoadingProgram((MonotonicRamp(0.0, 100.0, 1.0), Hold(50.0, 1.0)))

    def test_unload_starts_where_previous_ends(self):
        prog = LoadingProgram((MonotonicRamp(0.0, 100.0, 1.0), Unload(2.0)))
        assert prog.segments[1].stress_from == 100.0
        assert prog.stress([2.0])[0] == pytest.approx(50.0)

    def test_description_round_trip(self):
        prog = make_experiment_program(420.0, 470.0, 3)
        again = LoadingProgram.from_description(prog.describe(), prog.metadata)
        assert again == prog

    def test_unknown_segment(self):
        with pytest.raises(ConfigError):
            LoadingProgram.from_description([{"type": "Spiral"}])

    def test_harmonic_rate(self):
        seg = HarmonicCycles(100.0, 10.0, 50.0, 2, 1.0)
        tau = np.linspace(0.0, 2.0, 41)[1:-1]
        h = 1e-6
        fd = (seg.stress_at(tau + h) - seg.stress_at(tau - h)) / (2 * h)
        assert np.allclose(seg.rate(tau), fd, rtol=1e-6, atol=1e-4)
