from dataclasses import replace
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, strategies as st

from spincool.errors import LabelAmbiguity, NoSuchState, NotApplicable, NotHermitian
from spincool.species import LevelParams, SpinQuantum, get_species
from spincool.structure import (_propagate_labels, breit_rabi_energy, breit_rabi_spectrum, build_hamiltonian, derivative_bound,
                                diagonalize, dominant_labels, eigensystem, expansion_coefficients, splitting,
                                zeeman_sweep)

H = Fraction(1, 2)
YB = get_species("yb171")
SR = get_species("sr87")
YB_P = YB.level("1P1")
SR_P = SR.level("1P1")

# independent dense eigh of a separately assembled Yb 1P1 Hamiltonian at 1 T
YB_1T_ENERGIES = [-1.41004954e+04, -1.38936731e+04, -5.40245109e+00, 5.42813812e+00, 1.38844954e+04,
                  1.41096475e+04]
YB_1T_C0SQ_UP = 0.9998828982108565
YB_1T_C0SQ_DOWN = 0.9998792307079777


def _counts(w):
    vals, counts = np.unique(np.round(w, 6), return_counts=True)
    return dict(zip(vals.tolist(), counts.tolist()))


def test_yb_zero_field_lande():
    es = diagonalize(build_hamiltonian(YB_P, YB.I, 0.0))
    assert _counts(es.energies) == {-108.0: 4, 216.0: 2}


def test_zero_couplings_give_zero_matrix():
    lvl = LevelParams("X", SpinQuantum(2))
    assert not np.any(build_hamiltonian(lvl, SR.I, 0.0).matrix)


def test_ground_splitting_yb_1T():
    es = eigensystem("yb171", "1S0", 1.0)
    assert abs(splitting(es, (H, 0), (-H, 0))) == pytest.approx(7.499107, abs=1e-6)
    assert splitting(es, (H, 0), (H, 0)) == 0


def test_yb_1T_fixture():
    es = eigensystem("yb171", "1P1", 1.0)
    assert np.allclose(es.energies, YB_1T_ENERGIES, rtol=1e-8)
    assert abs(expansion_coefficients(es, (H, 0)).c[0]) ** 2 == pytest.approx(YB_1T_C0SQ_UP, abs=1e-12)
    assert abs(expansion_coefficients(es, (-H, 0)).c[0]) ** 2 == pytest.approx(YB_1T_C0SQ_DOWN, abs=1e-12)


def test_yb_mj_minus_one_pair_splitting():
    es = eigensystem("yb171", "1P1", 1.0)
    assert 200 <= abs(splitting(es, (H, -1), (-H, -1))) <= 220


def test_sr_zero_field_casimir():
    es = diagonalize(build_hamiltonian(SR_P, SR.I, 0.0))
    I, J = 4.5, 1.0
    expected = {}
    for F in (3.5, 4.5, 5.5):
        k = (F * (F + 1) - I * (I + 1) - J * (J + 1)) / 2
        q = (3 * k * k + 1.5 * k - I * (I + 1) * J * (J + 1)) / (2 * I * J * (2 * I - 1) * (2 * J - 1))
        expected[round(SR_P.A * k + SR_P.Q * q, 6)] = int(2 * F + 1)
    assert _counts(es.energies) == expected


def test_diagonal_input():
    es = diagonalize(np.diag([3.0, 1.0, 2.0]))
    assert np.allclose(es.energies, [1, 2, 3])
    assert np.allclose(np.abs(es.vectors), [[0, 0, 1], [1, 0, 0], [0, 1, 0]])


def test_not_hermitian():
    with pytest.raises(NotHermitian):
        diagonalize(np.array([[0.0, 1.0], [0.0, 0.0]]))


@pytest.mark.parametrize("species,B", [("yb171", 0.0), ("yb171", 0.3), ("sr87", 0.0), ("sr87", 0.02),
                                       ("sr87", 0.5)])
def test_eigensystem_invariants(species, B):
    sp = get_species(species)
    Hm = build_hamiltonian(sp.level("1P1"), sp.I, B)
    es = diagonalize(Hm, B)
    V = es.vectors
    assert np.allclose(V.conj().T @ V, np.eye(len(es)), atol=1e-10)
    assert es.energies.sum() == pytest.approx(np.trace(Hm.matrix).real, rel=1e-8, abs=1e-8)
    mf_basis = np.array([float(a + b) for a, b in Hm.basis])
    for k in range(len(es)):
        outside = np.abs(V[mf_basis != float(es.m_F[k]), k])
        assert outside.max(initial=0) <= 1e-12
        peak = V[np.argmax(np.abs(V[:, k])), k]
        assert peak.real > 0 and abs(peak.imag) < 1e-15


def test_degenerate_order_is_mf_descending():
    es = diagonalize(build_hamiltonian(YB_P, YB.I, 0.0))
    assert list(es.m_F[:4]) == sorted(es.m_F[:4], reverse=True)


def test_deterministic():
    a = eigensystem("sr87", "1P1", 0.07)
    b = eigensystem("sr87", "1P1", 0.07)
    assert np.array_equal(a.energies, b.energies) and np.array_equal(a.vectors, b.vectors)


@given(st.floats(0.0, 10.0))
def test_breit_rabi_matches_diagonalization(B):
    spec = breit_rabi_spectrum(YB_P, B, YB.I, YB.constants)
    es = diagonalize(build_hamiltonian(YB_P, YB.I, B), B)
    for m, energies in spec.items():
        num = sorted(es.energies[[k for k, mf in enumerate(es.m_F) if mf == m]])
        assert np.allclose(energies, num, rtol=1e-8, atol=1e-8 * 216)


def test_breit_rabi_zero_field():
    # +A/2 and -A
    assert breit_rabi_energy(YB_P, 0.0, H, 1) == pytest.approx(-108.0)
    assert breit_rabi_energy(YB_P, 0.0, H, -1) == pytest.approx(216.0)


def test_breit_rabi_stretched_linear():
    e = [breit_rabi_energy(YB_P, B, Fraction(3, 2), 1) for B in (0, 1, 2, 3)]
    assert np.allclose(np.diff(e, 2), 0, atol=1e-9)


def test_breit_rabi_as_printed_variant_differs():
    conv = breit_rabi_energy(YB_P, 1.0, H, 1)
    printed = breit_rabi_energy(YB_P, 1.0, H, 1, variant="as_printed")
    assert abs(printed - conv) / abs(conv) > 1e-3


def test_breit_rabi_not_applicable():
    with pytest.raises(NotApplicable):
        breit_rabi_energy(SR_P, 1.0, H, 1, I=SR.I)


def test_gerade_symmetry_pure_quadrupole():
    lvl = replace(SR_P, g_I=0.0, g_J=0.0)
    es = diagonalize(build_hamiltonian(lvl, SR.I, 0.05))
    for m in set(es.m_F):
        a = np.sort(es.energies[[k for k, x in enumerate(es.m_F) if x == m]])
        b = np.sort(es.energies[[k for k, x in enumerate(es.m_F) if x == -m]])
        assert np.allclose(a, b, atol=1e-9)


def test_expansion_coefficients_stretched():
    es = eigensystem("sr87", "1P1", 0.01)
    c = expansion_coefficients(es, (Fraction(9, 2), 1))
    assert c.c[1] == pytest.approx(1.0) and c.c[0] == 0 and c.c[-1] == 0


@pytest.mark.parametrize("species,B", [("yb171", 0.1), ("sr87", 0.003), ("sr87", 0.08)])
def test_expansion_norm(species, B):
    es = eigensystem(species, "1P1", B)
    for k in range(len(es)):
        c = expansion_coefficients(es, k)
        assert c.norm() == pytest.approx(1.0, abs=1e-10)
        assert max(c.c.values(), key=abs).real > 0


def test_c0_tends_to_one():
    es = eigensystem("yb171", "1P1", 100.0)
    for m in (H, -H):
        assert abs(expansion_coefficients(es, (m, 0)).c[0]) ** 2 > 1 - 1e-7


def test_no_such_state():
    es = eigensystem("yb171", "1P1", 1.0)
    with pytest.raises(NoSuchState):
        es.energy((Fraction(3, 2), 0))


def test_yb_sweep_structure():
    d = zeeman_sweep("yb171", "1P1", 0.0, 2.0, 500)
    assert len(d.curves) == 6
    bound = derivative_bound(YB_P, YB.I) * (d.B_grid[1] - d.B_grid[0])
    for curve in d.curves.values():
        assert np.max(np.abs(np.diff(curve))) <= bound + 1e-9
    top = {lab: d.curves[lab][-1] for lab in d.curves}
    for m_J in (1, 0, -1):
        e = [v for (mi, mj), v in top.items() if mj == m_J]
        assert abs(e[0] - e[1]) < 300
    centers = [np.mean([v for (mi, mj), v in top.items() if mj == m_J]) for m_J in (1, 0, -1)]
    assert np.allclose(np.diff(centers), -YB.constants.mu_B_over_h * 2.0, rtol=0.02)


def test_sweep_labels_agree_with_rank_rule():
    d = zeeman_sweep("sr87", "1P1", 0.0, 0.15, 300)
    for i in (0, 100, 299):
        es = eigensystem("sr87", "1P1", float(d.B_grid[i]))
        for lab, curve in d.curves.items():
            assert es.energy(lab) == pytest.approx(curve[i], abs=1e-9)


def test_label_permanence_at_double_field():
    d = zeeman_sweep("sr87", "1P1", 0.0, 0.15, 200)
    es = diagonalize(build_hamiltonian(SR_P, SR.I, 0.30), 0.30)
    dom = dominant_labels(es)
    ranked = eigensystem("sr87", "1P1", 0.30).labels
    assert dom == ranked
    assert set(dom) == set(d.curves)


def test_pure_zeeman_fan():
    lvl = LevelParams("X", SpinQuantum(2), g_J=1.0, g_I=0.5)
    sp = replace(SR, levels={"X": lvl})
    d = zeeman_sweep(sp, "X", 0.0, 1.0, 11)
    for (mi, mj), curve in d.curves.items():
        slope = float(mj) * SR.constants.mu_B_over_h - float(mi) * 0.5 * SR.constants.mu_N_over_h
        assert np.allclose(curve, slope * d.B_grid, atol=1e-9)


def test_low_overlap_raises():
    systems = [diagonalize(build_hamiltonian(SR_P, SR.I, B), B) for B in (0.0, 0.15)]
    _propagate_labels(systems)
    with pytest.raises(LabelAmbiguity):
        _propagate_labels(systems, min_overlap=0.999)


def test_threaded_sweep_identical():
    a = zeeman_sweep("sr87", "1P1", 0.0, 0.15, 100)
    b = zeeman_sweep("sr87", "1P1", 0.0, 0.15, 100, workers=4)
    for lab in a.curves:
        assert np.array_equal(a.curves[lab], b.curves[lab])
