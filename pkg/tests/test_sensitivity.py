from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.stats import qmc

from ratchetsens.errors import ConfigError, RankDeficiencyError
from ratchetsens.identify import FunctionProblem, IdentificationProblem, ParameterLayout, jacobian_fd
from ratchetsens.program import make_experiment_program, make_metric_program
from ratchetsens.sensitivity import (
    NoiseModel,
    RefitOperator,
    SobolConfig,
    box_muller,
    check_rank,
    cloud_size,
    correlation_matrix,
    fast_refit,
    linearized_distance,
    max_offdiagonal,
    mechanics_distance,
    mode_matrix,
    normal_equations_refit,
    problem_modes,
    relative_cloud_spread,
    run_sensitivity,
    sobol_normals,
    sobol_uniforms,
    strain_sensitivity,
    synthesize_noise,
    weighted_qr,
)
from ratchetsens.simulator import simulate_record

from conftest import af_params


def _bit_reverse(n: int, bits: int = 30) -> float:
    return int(f"{n:0{bits}b}"[::-1], 2) / 2.0**bits


def _second_dimension(n: int) -> float:
    # direction numbers of the primitive polynomial x + 1: m_k = 2 m_(k-1) xor m_(k-1)
    m, out, k = 1, 0, 1
    while n:
        if n & 1:
            out ^= m << (30 - k)
        n >>= 1
        m = (m << 1) ^ m
        k += 1
    return out / 2.0**30


class TestSobol:
    def test_first_dimensions_against_closed_forms(self):
        u = sobol_uniforms(SobolConfig(dimensions=2, skip=0, leap=0, n_draws=300))
        assert np.array_equal(u[:, 0], [_bit_reverse(n) for n in range(300)])
        assert np.array_equal(u[:, 1], [_second_dimension(n) for n in range(300)])

    def test_same_point_set_as_scipy(self):
        u = sobol_uniforms(SobolConfig(dimensions=7, skip=0, leap=0, n_draws=256))
        ref = qmc.Sobol(d=8, scramble=False, bits=30).random_base2(8)
        key = lambda a: sorted(map(tuple, a))  # noqa: E731
        assert key(u) == key(ref)

    def test_skip_and_leap(self):
        full = sobol_uniforms(SobolConfig(dimensions=4, skip=0, leap=0, n_draws=200))
        sliced = sobol_uniforms(SobolConfig(dimensions=4, skip=7, leap=3, n_draws=40))
        assert np.array_equal(sliced, full[7::4][:40])

    def test_bitwise_reproducible(self):
        cfg = SobolConfig(dimensions=10, n_draws=500)
        assert np.array_equal(sobol_normals(cfg), sobol_normals(cfg))

    def test_antithetic(self):
        z = sobol_normals(SobolConfig(dimensions=3, n_draws=10, antithetic=True))
        assert np.array_equal(z[1::2], -z[0::2])
        assert np.all(z.sum(axis=0) == 0.0)
        with pytest.raises(ConfigError):
            SobolConfig(n_draws=3, antithetic=True)

    def test_range_guard(self):
        with pytest.raises(ConfigError):
            sobol_uniforms(SobolConfig(dimensions=2, skip=2**30, leap=0, n_draws=1))
        with pytest.raises(ConfigError):
            SobolConfig(dimensions=30000)

    def test_odd_dimension_count(self):
        assert sobol_normals(SobolConfig(dimensions=5, n_draws=4)).shape == (4, 5)


class TestBoxMuller:
    def test_known_values(self):
        z = box_muller(np.array([[0.5, 0.125]]))
        r = math.sqrt(2.0 * math.log(2.0))
        assert z[0, 0] == pytest.approx(r * math.cos(math.pi / 4), rel=1e-15)
        assert z[0, 1] == pytest.approx(r * math.sin(math.pi / 4), rel=1e-15)

    def test_zero_is_clipped(self):
        assert np.all(np.isfinite(box_muller(np.zeros((2, 2)))))

    def test_needs_pairs(self):
        with pytest.raises(ConfigError):
            box_muller(np.zeros((1, 3)))


class TestNoise:
    def test_mode_matrix(self):
        M = mode_matrix(np.array([0.0, 0.5, 1.0]), 1.0, 3)
        assert np.allclose(M[1], [1.0, 0.0, -1.0], atol=1e-15)
        assert np.allclose(M[[0, 2]], 0.0, atol=1e-15)

    def test_block_structure(self, af2):
        recs = [simulate_record(af2, make_experiment_program(m, a, 4)) for m, a in ((420.0, 470.0), (100.0, 600.0))]
        B = problem_modes(recs, 3)
        assert B.shape == (16, 6)
        assert np.all(B[:8, 3:] == 0.0) and np.all(B[8:, :3] == 0.0)
        c = np.array([1e-6, -2e-6, 5e-7])
        assert np.allclose(B[:8, :3] @ c, synthesize_noise(c, recs[0]))

    def test_validation(self):
        with pytest.raises(ConfigError):
            NoiseModel(sigma=-1.0)
        with pytest.raises(ConfigError):
            mode_matrix(np.zeros(2), 0.0, 2)


def _well_conditioned(seed=0, n=40, m=5):
    rng = np.random.default_rng(seed)
    J = rng.normal(size=(n, m)) @ np.diag([1.0, 10.0, 0.1, 3.0, 1e3])[:m, :m]
    return rng, J


class TestFastRefit:
    @pytest.mark.parametrize("weight", [None, "diag", "full"])
    def test_qr_equals_normal_equations(self, weight):
        rng, J = _well_conditioned()
        n, m = J.shape
        if weight == "diag":
            weight = rng.uniform(0.5, 2.0, n)
        elif weight == "full":
            A = rng.normal(size=(n, n))
            weight = A @ A.T / n + np.eye(n)
        p, mod, exp, noise = rng.normal(size=m), rng.normal(size=n), rng.normal(size=n), 0.1 * rng.normal(size=n)
        Q, R, _ = weighted_qr(J, weight)
        a = fast_refit((Q, R), p, mod, exp, noise, weight)
        b = normal_equations_refit(J, p, mod, exp, noise, weight)
        assert np.max(np.abs(a - b)) <= 1e-8 * np.max(np.abs(b))

    def test_zero_noise_returns_optimum(self):
        rng, J = _well_conditioned(1)
        p = rng.normal(size=J.shape[1])
        exp = rng.normal(size=J.shape[0])
        Q, R, _ = weighted_qr(J)
        # at a zero-gradient point the residual is orthogonal to range(J)
        exp_star = exp - Q @ (Q.T @ exp)
        assert np.array_equal(fast_refit((Q, R), p, np.zeros_like(exp), exp_star, np.zeros_like(exp)) - p, np.zeros_like(p)) or np.max(
            np.abs(fast_refit((Q, R), p, np.zeros_like(exp), exp_star, np.zeros_like(exp)) - p)
        ) < 1e-14

    def test_shift_is_linear_in_noise(self):
        rng, J = _well_conditioned(2)
        n, m = J.shape
        M = mode_matrix(np.linspace(0, 1, n), 1.0, 6)
        op = RefitOperator.build(J, np.ones(m), np.zeros(n), np.zeros(n), M)
        c = rng.normal(size=(3, 6)) * 1e-6
        assert np.array_equal(op.shifts(2.0 * c), 2.0 * op.shifts(c))
        assert np.array_equal(op.shifts(np.zeros((1, 6))), np.zeros((1, m)))

    def test_rank_deficiency(self):
        _, J = _well_conditioned(3)
        J = np.column_stack([J, J[:, 0] * 2.0])
        _, R, _ = weighted_qr(J)
        with pytest.raises(RankDeficiencyError) as info:
            check_rank(R, list("abcdef"), col_norms=np.linalg.norm(J, axis=0))
        assert info.value.column == 5 and info.value.name == "f"

    def test_rank_check_is_unit_free(self):
        _, J = _well_conditioned(4)
        r1 = check_rank(weighted_qr(J)[1], col_norms=np.linalg.norm(J, axis=0))
        Js = J * np.array([1e-6, 1.0, 1e6, 1.0, 1.0])
        r2 = check_rank(weighted_qr(Js)[1], col_norms=np.linalg.norm(Js, axis=0))
        assert np.allclose(r1, r2, rtol=1e-9)


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 10_000), st.integers(2, 6))
def test_correlation_matrix_properties(seed, m):
    J = np.random.default_rng(seed).normal(size=(12, m))
    C = correlation_matrix(J)
    assert np.array_equal(C, C.T)
    assert np.all(np.diag(C) == 1.0)
    assert np.all(np.abs(C) <= 1.0)


def test_correlation_of_proportional_columns():
    J = np.array([[1.0, 2.0, 0.0], [2.0, 4.0, 1.0], [3.0, 6.0, 0.0]])
    C = correlation_matrix(J)
    assert C[0, 1] == pytest.approx(1.0, abs=1e-15)
    assert max_offdiagonal(C) == pytest.approx(1.0)
    with pytest.raises(RankDeficiencyError):
        correlation_matrix(np.array([[1.0, 0.0], [2.0, 0.0]]))


class TestDistances:
    def test_linearized_distance(self):
        S = np.array([[1.0, 0.0], [0.0, 2.0], [1.0, -1.0]])
        assert linearized_distance(S, [1.0, 1.0]) == 2.0
        batch = linearized_distance(S, np.array([[1.0, 1.0], [0.5, 0.0]]))
        assert np.array_equal(batch, [2.0, 0.5])
        with pytest.raises(ConfigError):
            linearized_distance(S, [1.0])

    def test_cloud_size_scaling(self):
        S = np.random.default_rng(0).normal(size=(50, 3))
        d = np.random.default_rng(1).normal(size=(20, 3))
        p = np.ones(3)
        c1 = cloud_size(p, p + d, S)
        assert cloud_size(p, p + 2.0 * d, S) == pytest.approx(2.0 * c1, rel=1e-14)
        assert cloud_size(p, np.tile(p, (5, 1)), S) == 0.0

    def test_mechanics_distance_axioms(self, af2):
        prog = make_metric_program(5, 800.0)
        q = af2.with_values(K=410.0)
        assert mechanics_distance(af2, af2, prog) == 0.0
        assert mechanics_distance(af2, q, prog) == mechanics_distance(q, af2, prog) > 0.0

    def test_raw_vectors_need_layout(self, af2):
        with pytest.raises(ConfigError):
            mechanics_distance(np.ones(7), np.ones(7), make_metric_program(2))


@pytest.fixture(scope="module")
def small_problem():
    p = af_params(2)
    progs = [make_experiment_program(420.0, 470.0, 8), make_experiment_program(0.0, 650.0, 8)]
    layout = ParameterLayout.for_params(p)
    prob = IdentificationProblem([(g, simulate_record(p, g)) for g in progs], layout)
    x = layout.values(p)
    metric = make_metric_program(8, 890.0)
    return prob, x, metric, jacobian_fd(x, prob), strain_sensitivity(x, metric, layout)


class TestRunSensitivity:
    def _run(self, small_problem, sigma, **kw):
        prob, x, metric, J, S = small_problem
        return run_sensitivity(
            prob, x, NoiseModel(sigma, 3), SobolConfig(dimensions=6, n_draws=256), metric, jacobian=J, d_eps_dp=S, **kw
        )

    def test_scaling_and_zero_noise(self, small_problem):
        a = self._run(small_problem, 1e-6)
        b = self._run(small_problem, 2e-6)
        z = self._run(small_problem, 0.0)
        assert b.cloud_size == pytest.approx(2.0 * a.cloud_size, rel=1e-10)
        assert z.cloud_size == 0.0
        assert a.center_offset < 1e-12
        assert a.cloud_size > 0.0

    def test_schedule_does_not_change_results(self, small_problem):
        a = self._run(small_problem, 1e-6, workers=1, chunk=256)
        b = self._run(small_problem, 1e-6, workers=3, chunk=17)
        assert np.array_equal(a.draws, b.draws) and np.array_equal(a.distances, b.distances)

    def test_exact_distances_track_linearization(self, small_problem):
        c = self._run(small_problem, 1e-6, exact_metric=4)
        assert np.allclose(c.exact_distances, c.distances[:4], rtol=0.05)

    def test_spread_and_correlation(self, small_problem):
        c = self._run(small_problem, 1e-6)
        assert relative_cloud_spread(c).shape == (7,)
        assert np.array_equal(c.corr, c.corr.T)

    def test_dimension_mismatch(self, small_problem):
        prob, x, metric, J, S = small_problem
        with pytest.raises(ConfigError):
            run_sensitivity(prob, x, NoiseModel(1e-6, 3), SobolConfig(dimensions=5), metric, jacobian=J, d_eps_dp=S)

    def test_function_problem_needs_modes(self):
        prob = FunctionProblem(lambda x: x, np.zeros(2), names=["a", "b"])
        with pytest.raises(ConfigError):
            run_sensitivity(prob, np.ones(2), NoiseModel(), SobolConfig(dimensions=2), make_metric_program(2))
