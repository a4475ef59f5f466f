"""Symmetric second-order tensors stored as six independent components.

Component order is (11, 22, 33, 12, 13, 23). Off-diagonal entries are the
true tensor components (no Voigt factor); norms and contractions count them
twice, as in a full 3x3 contraction.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

ABS_FLOOR = 1e-14

# weights of the six stored components in a full 3x3 contraction
_CONTRACTION_WEIGHTS = np.array([1.0, 1.0, 1.0, 2.0, 2.0, 2.0])
_INDEX_PAIRS = ((0, 0), (1, 1), (2, 2), (0, 1), (0, 2), (1, 2))


@dataclass(frozen=True, eq=False)
class SymTensor:
    """Immutable symmetric 3x3 tensor."""

    components: np.ndarray

    def __post_init__(self):
        comp = np.array(self.components, dtype=float).reshape(6)
        comp.setflags(write=False)
        object.__setattr__(self, "components", comp)

    @classmethod
    def zero(cls) -> SymTensor:
        return cls(np.zeros(6))

    @classmethod
    def identity(cls) -> SymTensor:
        return cls(np.array([1.0, 1.0, 1.0, 0.0, 0.0, 0.0]))

    @classmethod
    def diag(cls, a11: float, a22: float, a33: float) -> SymTensor:
        return cls(np.array([a11, a22, a33, 0.0, 0.0, 0.0]))

    @classmethod
    def from_matrix(cls, m) -> SymTensor:
        m = np.asarray(m, dtype=float)
        if m.shape != (3, 3):
            raise ValueError(f"expected a 3x3 matrix, got shape {m.shape}")
        sym = 0.5 * (m + m.T)
        return cls(np.array([sym[i, j] for i, j in _INDEX_PAIRS]))

    def to_matrix(self) -> np.ndarray:
        m = np.empty((3, 3))
        for value, (i, j) in zip(self.components, _INDEX_PAIRS):
            m[i, j] = m[j, i] = value
        return m

    def trace(self) -> float:
        return float(self.components[:3].sum())

    def scale(self) -> float:
        """Largest component magnitude, used for relative tolerances."""
        return float(np.max(np.abs(self.components)))

    def __add__(self, other: SymTensor) -> SymTensor:
        return SymTensor(self.components + other.components)

    def __sub__(self, other: SymTensor) -> SymTensor:
        return SymTensor(self.components - other.components)

    def __neg__(self) -> SymTensor:
        return SymTensor(-self.components)

    def __mul__(self, factor: float) -> SymTensor:
        return SymTensor(self.components * float(factor))

    __rmul__ = __mul__

    def __truediv__(self, factor: float) -> SymTensor:
        return SymTensor(self.components / float(factor))

    def allclose(self, other: SymTensor, rtol: float = 1e-12, atol: float = ABS_FLOOR) -> bool:
        return bool(np.allclose(self.components, other.components, rtol=rtol, atol=atol))

    def __repr__(self) -> str:
        return f"SymTensor({np.array2string(self.components, precision=6)})"


def deviator(a: SymTensor) -> SymTensor:
    """Return ``a - tr(a)/3 * 1``."""
    comp = a.components.copy()
    comp[:3] -= comp[:3].sum() / 3.0
    return SymTensor(comp)


def double_contract(a: SymTensor, b: SymTensor) -> float:
    return float(np.dot(_CONTRACTION_WEIGHTS * a.components, b.components))


def frobenius_norm(a: SymTensor) -> float:
    return float(np.sqrt(double_contract(a, a)))
