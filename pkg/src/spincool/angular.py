"""Angular-momentum operators on the |m_I> x |m_J> product basis.

Basis ordering is frozen: index = idx_I * (2J+1) + idx_J with both
projections running from +j down to -j.  Eigenvector files expose this
ordering, so it must not change.
"""

from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction
from math import exp, lgamma, sqrt
from typing import NamedTuple

import numpy as np

from .errors import InvalidSpins, QuadrupoleUndefined
from .species import SpinQuantum, as_half_integer

Basis = tuple[tuple[Fraction, Fraction], ...]


@dataclass(frozen=True)
class OperatorMatrix:
    """Dense operator plus the (m_I, m_J) label of every basis state."""

    matrix: np.ndarray
    basis: Basis | None = None

    @property
    def dim(self) -> int:
        return self.matrix.shape[0]

    def __array__(self, dtype=None, copy=None):
        return self.matrix if dtype is None else self.matrix.astype(dtype)

    def m_F(self) -> np.ndarray:
        """Total projection of each basis state (floats)."""
        if self.basis is None:
            raise ValueError("operator carries no basis labels")
        return np.array([float(mi + mj) for mi, mj in self.basis])

    def __add__(self, other):
        if isinstance(other, OperatorMatrix):
            if self.basis != other.basis:
                raise ValueError("basis mismatch")
            other = other.matrix
        return OperatorMatrix(self.matrix + other, self.basis)

    def __mul__(self, scalar):
        return OperatorMatrix(self.matrix * scalar, self.basis)

    __rmul__ = __mul__


class SpinMatrices(NamedTuple):
    Jz: np.ndarray
    Jplus: np.ndarray
    Jminus: np.ndarray


def spin_matrices(j) -> SpinMatrices:
    j = SpinQuantum.of(j)
    jv = float(j)
    m = np.array([float(x) for x in j.projections()])
    Jz = np.diag(m).astype(complex)
    Jp = np.zeros((j.dim, j.dim), dtype=complex)
    # <m+1|J+|m>: row k-1 (higher m), column k
    for k in range(1, j.dim):
        Jp[k - 1, k] = sqrt(jv * (jv + 1) - m[k] * (m[k] + 1))
    return SpinMatrices(Jz, Jp, Jp.conj().T.copy())


def product_basis(I, J) -> Basis:
    I, J = SpinQuantum.of(I), SpinQuantum.of(J)
    return tuple((mi, mj) for mi in I.projections() for mj in J.projections())


def _hermitize(M: np.ndarray) -> np.ndarray:
    return 0.5 * (M + M.conj().T)


def nuclear_z(I, J) -> OperatorMatrix:
    I, J = SpinQuantum.of(I), SpinQuantum.of(J)
    return OperatorMatrix(np.kron(spin_matrices(I).Jz, np.eye(J.dim)), product_basis(I, J))


def electronic_z(I, J) -> OperatorMatrix:
    I, J = SpinQuantum.of(I), SpinQuantum.of(J)
    return OperatorMatrix(np.kron(np.eye(I.dim), spin_matrices(J).Jz), product_basis(I, J))


def idotj(I, J) -> OperatorMatrix:
    """I.J = IzJz + (I+J- + I-J+)/2 on the product basis."""
    I, J = SpinQuantum.of(I), SpinQuantum.of(J)
    si, sj = spin_matrices(I), spin_matrices(J)
    M = np.kron(si.Jz, sj.Jz) + 0.5 * (np.kron(si.Jplus, sj.Jminus) + np.kron(si.Jminus, sj.Jplus))
    return OperatorMatrix(_hermitize(M), product_basis(I, J))


def quadrupole_operator(I, J) -> OperatorMatrix:
    """[3(I.J)^2 + 3/2 I.J - I(I+1)J(J+1)] / [2IJ(2I-1)(2J-1)]."""
    I, J = SpinQuantum.of(I), SpinQuantum.of(J)
    if I.twice_value <= 1 or J.twice_value <= 1:
        raise QuadrupoleUndefined(f"quadrupole term needs I, J > 1/2 (got I={I}, J={J})")
    iv, jv = float(I), float(J)
    X = idotj(I, J).matrix
    num = 3 * X @ X + 1.5 * X - iv * (iv + 1) * jv * (jv + 1) * np.eye(X.shape[0])
    den = 2 * iv * jv * (2 * iv - 1) * (2 * jv - 1)
    return OperatorMatrix(_hermitize(num / den), product_basis(I, J))


# ln(n!) for the Racah sum; 2j <= 40 keeps every argument well below 128.
_LOGFACT = np.array([lgamma(n + 1) for n in range(128)])


def _lf(x: Fraction) -> float:
    return _LOGFACT[int(x)]


def clebsch_gordan(j1, m1, j2, m2, F, mF) -> float:
    """<j1 m1; j2 m2 | F mF> with the Condon-Shortley phase."""
    j1, m1, j2, m2, F, mF = (as_half_integer(x) for x in (j1, m1, j2, m2, F, mF))
    for j, m in ((j1, m1), (j2, m2), (F, mF)):
        if j < 0 or not SpinQuantum.of(j).allows(m):
            raise InvalidSpins(f"projection {m} not allowed for spin {j}")
    if mF != m1 + m2 or not abs(j1 - j2) <= F <= j1 + j2 or (j1 + j2 + F).denominator != 1:
        return 0.0

    log_pref = 0.5 * (
        np.log(float(2 * F + 1))
        + _lf(j1 + j2 - F) + _lf(j1 - j2 + F) + _lf(-j1 + j2 + F) - _lf(j1 + j2 + F + 1)
        + _lf(j1 + m1) + _lf(j1 - m1) + _lf(j2 + m2) + _lf(j2 - m2) + _lf(F + mF) + _lf(F - mF)
    )
    k_min = int(max(0, j2 - F - m1, j1 - F + m2))
    k_max = int(min(j1 + j2 - F, j1 - m1, j2 + m2))
    total = 0.0
    for k in range(k_min, k_max + 1):
        log_den = (
            _LOGFACT[k] + _lf(j1 + j2 - F - k) + _lf(j1 - m1 - k) + _lf(j2 + m2 - k)
            + _lf(F - j2 + m1 + k) + _lf(F - j1 - m2 + k)
        )
        total += (-1) ** k * exp(log_pref - log_den)
    return total
