from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, strategies as st
from sympy import Rational
from sympy.physics.quantum.cg import CG

from spincool.angular import (clebsch_gordan, electronic_z, idotj, nuclear_z, product_basis,
                              quadrupole_operator, spin_matrices)
from spincool.errors import InvalidSpins, QuadrupoleUndefined

HALF = [Fraction(k, 2) for k in range(0, 10)]


def test_spin_half():
    s = spin_matrices("1/2")
    assert np.allclose(s.Jz, np.diag([0.5, -0.5]))


def test_spin_one_ladder():
    s = spin_matrices(1)
    assert np.allclose(np.diag(s.Jz), [1, 0, -1])
    # <0|J-|1>: row of m=0 (index 1), column of m=1 (index 0)
    assert s.Jminus[1, 0] == pytest.approx(np.sqrt(2))


def test_spin_nine_halves_traceless():
    s = spin_matrices("9/2")
    assert s.Jz.shape == (10, 10)
    assert np.trace(s.Jz) == 0


@pytest.mark.parametrize("j", HALF[1:])
def test_commutators(j):
    Jz, Jp, Jm = spin_matrices(j)
    assert np.allclose(Jz @ Jp - Jp @ Jz, Jp, atol=1e-12)
    assert np.allclose(Jz @ Jm - Jm @ Jz, -Jm, atol=1e-12)
    assert np.allclose(Jp @ Jm - Jm @ Jp, 2 * Jz, atol=1e-12)


def test_basis_order():
    b = product_basis("1/2", 1)
    assert b[0] == (Fraction(1, 2), 1) and b[1] == (Fraction(1, 2), 0) and b[5] == (Fraction(-1, 2), -1)
    assert np.allclose(np.diag(nuclear_z("1/2", 1).matrix), [0.5] * 3 + [-0.5] * 3)
    assert np.allclose(np.diag(electronic_z("1/2", 1).matrix), [1, 0, -1] * 2)


def _spectrum(M):
    w = np.round(np.linalg.eigvalsh(M), 9)
    vals, counts = np.unique(w, return_counts=True)
    return dict(zip(vals.tolist(), counts.tolist()))


def test_idotj_half_one():
    assert _spectrum(idotj("1/2", 1).matrix) == {-1.0: 2, 0.5: 4}


def test_idotj_zero_coupling():
    assert not np.any(idotj("1/2", 0).matrix)


@pytest.mark.parametrize("I,J", [("1/2", 1), ("9/2", 1), ("1/2", 0), ("9/2", 0), ("3/2", "3/2")])
def test_idotj_casimir(I, J):
    iv, jv = float(Fraction(I)), float(Fraction(J))
    expected = {}
    F = abs(iv - jv)
    while F <= iv + jv + 1e-9:
        expected[round((F * (F + 1) - iv * (iv + 1) - jv * (jv + 1)) / 2, 9)] = int(round(2 * F + 1))
        F += 1
    assert _spectrum(idotj(I, J).matrix) == expected


def test_idotj_sr_multiplicities():
    assert sorted(_spectrum(idotj("9/2", 1).matrix).values()) == [8, 10, 12]


def test_quadrupole_sr():
    Q = quadrupole_operator("9/2", 1).matrix
    X = idotj("9/2", 1).matrix
    assert abs(np.trace(Q)) < 1e-12
    w, v = np.linalg.eigh(X)
    P = v[:, np.isclose(w, 4.5)] @ v[:, np.isclose(w, 4.5)].conj().T
    assert np.allclose(Q @ P, 0.25 * P, atol=1e-12)


def test_quadrupole_casimir_all_blocks():
    I, J = 4.5, 1.0
    X = idotj("9/2", 1).matrix
    Q = quadrupole_operator("9/2", 1).matrix
    w, v = np.linalg.eigh(X)
    for k in np.unique(np.round(w, 9)):
        P = v[:, np.isclose(w, k)] @ v[:, np.isclose(w, k)].conj().T
        scalar = (3 * k * k + 1.5 * k - I * (I + 1) * J * (J + 1)) / (2 * I * J * (2 * I - 1) * (2 * J - 1))
        assert np.allclose(Q @ P, scalar * P, atol=1e-12)


def test_quadrupole_undefined():
    with pytest.raises(QuadrupoleUndefined):
        quadrupole_operator("1/2", 1)


@pytest.mark.parametrize("op", [idotj, quadrupole_operator])
def test_hermitian_and_commutes_with_fz(op):
    M = op("9/2", 1)
    assert np.array_equal(M.matrix, M.matrix.conj().T)
    Fz = np.diag(M.m_F())
    assert np.max(np.abs(Fz @ M.matrix - M.matrix @ Fz)) < 1e-12


def test_cg_examples():
    assert clebsch_gordan("1/2", "1/2", "1/2", "-1/2", 0, 0) == pytest.approx(2 ** -0.5)
    assert clebsch_gordan(1, 1, "1/2", "1/2", "3/2", "3/2") == pytest.approx(1.0)
    assert clebsch_gordan(1, 1, 1, 0, 1, 0) == 0.0
    with pytest.raises(InvalidSpins):
        clebsch_gordan("1/2", "3/2", "1/2", "1/2", 1, 2)


spins = st.integers(0, 9).map(lambda k: Fraction(k, 2))


@st.composite
def cg_args(draw):
    j1, j2 = draw(spins), draw(spins)
    m1 = j1 - draw(st.integers(0, int(2 * j1)))
    m2 = j2 - draw(st.integers(0, int(2 * j2)))
    return j1, m1, j2, m2


@given(cg_args())
def test_cg_completeness(args):
    j1, m1, j2, m2 = args
    total = 0.0
    F = abs(j1 - j2)
    while F <= j1 + j2:
        if abs(m1 + m2) <= F:
            total += clebsch_gordan(j1, m1, j2, m2, F, m1 + m2) ** 2
        F += 1
    assert total == pytest.approx(1.0, abs=1e-12)


@given(cg_args(), st.integers(0, 18))
def test_cg_matches_sympy(args, k):
    j1, m1, j2, m2 = args
    F = abs(j1 - j2) + (k % int(2 * min(j1, j2) + 1))
    if abs(m1 + m2) > F:
        return
    ref = float(CG(*(Rational(x.numerator, x.denominator) for x in (j1, m1, j2, m2, F, m1 + m2))).doit())
    assert clebsch_gordan(j1, m1, j2, m2, F, m1 + m2) == pytest.approx(ref, abs=1e-12)
