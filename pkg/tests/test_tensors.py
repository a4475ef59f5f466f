from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from ratchetsens.tensors import SymTensor, deviator, double_contract, frobenius_norm

finite = st.floats(-1e3, 1e3, allow_nan=False, allow_infinity=False)
sym6 = arrays(np.float64, 6, elements=finite)


def _mat(a: SymTensor) -> np.ndarray:
    return a.to_matrix()


class TestSymTensor:
    def test_matrix_round_trip(self):
        m = np.array([[1.0, 2.0, 3.0], [2.0, 4.0, 5.0], [3.0, 5.0, 6.0]])
        assert np.array_equal(SymTensor.from_matrix(m).to_matrix(), m)

    def test_from_matrix_symmetrizes(self):
        m = np.array([[0.0, 2.0, 0.0], [0.0, 0.0, 0.0], [0.0, 0.0, 0.0]])
        assert SymTensor.from_matrix(m).to_matrix()[0, 1] == 1.0

    def test_rejects_bad_shape(self):
        with pytest.raises(ValueError):
            SymTensor.from_matrix(np.eye(2))

    def test_immutable(self):
        a = SymTensor.identity()
        with pytest.raises(ValueError):
            a.components[0] = 2.0

    def test_identity_trace(self):
        assert SymTensor.identity().trace() == 3.0
        assert SymTensor.zero().scale() == 0.0

    def test_arithmetic(self):
        a = SymTensor.diag(1.0, 2.0, 3.0)
        b = SymTensor.identity()
        assert (a + b).allclose(SymTensor.diag(2.0, 3.0, 4.0))
        assert (a - b).allclose(SymTensor.diag(0.0, 1.0, 2.0))
        assert (2.0 * a).allclose(a * 2.0)
        assert (a / 2.0).allclose(SymTensor.diag(0.5, 1.0, 1.5))
        assert (-a).allclose(SymTensor.diag(-1.0, -2.0, -3.0))


@settings(max_examples=60, deadline=None)
@given(sym6, sym6)
def test_double_contraction_matches_matrix_form(a, b):
    A, B = SymTensor(a), SymTensor(b)
    expected = float(np.sum(_mat(A) * _mat(B)))
    assert double_contract(A, B) == pytest.approx(expected, rel=1e-12, abs=1e-9)


@settings(max_examples=60, deadline=None)
@given(sym6)
def test_deviator_is_traceless_and_idempotent(a):
    d = deviator(SymTensor(a))
    assert abs(d.trace()) <= 1e-12 * max(1.0, np.abs(a).max())
    assert deviator(d).allclose(d, atol=1e-12 * max(1.0, np.abs(a).max()))


@settings(max_examples=60, deadline=None)
@given(sym6)
def test_norm_is_frobenius(a):
    A = SymTensor(a)
    assert frobenius_norm(A) == pytest.approx(np.linalg.norm(_mat(A)), rel=1e-12, abs=1e-12)
