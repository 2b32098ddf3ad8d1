"""Hyperfine + Zeeman + quadrupole level structure of a single electronic level.

The Hamiltonian (E/h, MHz) for a field B along z is

    H = A I.J + Q q(I, J) + g_J mu_B B Jz - g_I mu_N B Iz

with q the normalised quadrupole operator from :mod:`spincool.angular`.
H conserves m_F = m_I + m_J, so it is diagonalised block by block; every
eigenvector is then supported on a single m_F block exactly.
"""

from __future__ import annotations

import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from fractions import Fraction
from functools import lru_cache
from typing import Iterable, Mapping, Sequence

import numpy as np
from scipy.optimize import linear_sum_assignment

from .angular import OperatorMatrix, electronic_z, idotj, nuclear_z, product_basis, quadrupole_operator
from .errors import LabelAmbiguity, NoSuchState, NotApplicable, NotHermitian
from .species import (
    LevelParams,
    PhysicalConstants,
    SpeciesParams,
    SpeciesRegistry,
    SpinQuantum,
    as_half_integer,
    format_half,
    resolve,
)

Label = tuple[Fraction, Fraction]  # (m_I, m_J)

DEGENERACY_TOL = 1e-9  # MHz
HERMITICITY_TOL = 1e-9


def make_label(m_I, m_J) -> Label:
    return (as_half_integer(m_I), as_half_integer(m_J))


def format_label(label: Label) -> str:
    return f"(m_I={format_half(label[0])}, m_J={format_half(label[1])})"


@lru_cache(maxsize=256)
def _field_free_parts(level: LevelParams, I: SpinQuantum, constants: PhysicalConstants):
    J = level.J
    basis = product_basis(I, J)
    H0 = np.zeros((len(basis), len(basis)))
    if level.A:
        H0 += level.A * idotj(I, J).matrix.real
    if level.Q:
        H0 += level.Q * quadrupole_operator(I, J).matrix.real
    dH = (level.g_J * constants.mu_B_over_h * electronic_z(I, J).matrix.real
          - level.g_I * constants.mu_N_over_h * nuclear_z(I, J).matrix.real)
    for M in (H0, dH):
        M.setflags(write=False)
    return basis, H0, dH


def build_hamiltonian(level: LevelParams, I, B: float,
                      constants: PhysicalConstants = PhysicalConstants()) -> OperatorMatrix:
    if B < 0:
        raise ValueError(f"field magnitude must be >= 0, got {B}")
    basis, H0, dH = _field_free_parts(level, SpinQuantum.of(I), constants)
    H = H0 + B * dH
    return OperatorMatrix(0.5 * (H + H.T), basis)


@dataclass(frozen=True)
class EigenSystem:
    """Eigen-decomposition at one field; energies ascending, vectors as columns."""

    B: float | None
    energies: np.ndarray
    vectors: np.ndarray
    m_F: tuple[Fraction, ...] | None = None
    basis: tuple[Label, ...] | None = None
    labels: tuple[Label, ...] | None = None

    def __len__(self) -> int:
        return len(self.energies)

    def index(self, state) -> int:
        """Position of a state given by integer index or adiabatic (m_I, m_J) label."""
        if isinstance(state, (int, np.integer)):
            if not 0 <= state < len(self):
                raise NoSuchState(f"index {state} out of range")
            return int(state)
        if self.labels is None:
            raise NoSuchState("eigensystem carries no adiabatic labels")
        label = make_label(*state)
        try:
            return self.labels.index(label)
        except ValueError:
            raise NoSuchState(f"no state {format_label(label)}") from None

    def energy(self, state) -> float:
        return float(self.energies[self.index(state)])

    def vector(self, state) -> np.ndarray:
        return self.vectors[:, self.index(state)]


def _fix_phase(v: np.ndarray) -> np.ndarray:
    k = int(np.argmax(np.abs(v)))
    ph = v[k] / abs(v[k])
    return v * np.conj(ph) if np.iscomplexobj(v) else v * np.sign(ph)


@lru_cache(maxsize=64)
def _block_structure(basis):
    mf = np.array([mi + mj for mi, mj in basis], dtype=object)
    blocks = tuple((m, np.flatnonzero(mf == m)) for m in sorted(set(mf), reverse=True))
    off = np.ones((len(basis), len(basis)), dtype=bool)
    for _, idx in blocks:
        off[np.ix_(idx, idx)] = False
    return blocks, off


def diagonalize(H, B: float | None = None) -> EigenSystem:
    """Hermitian eigen-decomposition with m_F block structure when labels are known.

    Degenerate energies (within 1e-9 MHz) are ordered by m_F descending;
    each eigenvector's largest component is made real and positive.
    """
    basis = H.basis if isinstance(H, OperatorMatrix) else None
    M = np.asarray(H.matrix if isinstance(H, OperatorMatrix) else H)
    scale = max(1.0, float(np.max(np.abs(M)))) if M.size else 1.0
    if np.max(np.abs(M - M.conj().T), initial=0.0) > HERMITICITY_TOL * scale:
        raise NotHermitian("operator deviates from Hermitian beyond 1e-9 relative")
    M = 0.5 * (M + M.conj().T)
    if np.iscomplexobj(M) and not np.any(M.imag):
        M = M.real
    n = M.shape[0]

    if basis is None:
        w, v = np.linalg.eigh(M)
        v = np.column_stack([_fix_phase(v[:, k]) for k in range(n)]) if n else v
        return EigenSystem(B, w, v)

    blocks, off_block = _block_structure(tuple(basis))
    if np.max(np.abs(M[off_block]), initial=0.0) > 1e-12 * scale:
        raise ValueError("operator couples different m_F blocks")

    energies = np.empty(n)
    V = np.zeros((n, n), dtype=M.dtype)
    mf_col = []
    col = 0
    for m, idx in blocks:
        w, v = np.linalg.eigh(M[np.ix_(idx, idx)])
        cols = slice(col, col + len(idx))
        energies[cols] = w
        V[idx, cols] = v
        mf_col.extend([m] * len(idx))
        col += len(idx)
    # largest component of each column real and positive
    peak = V[np.argmax(np.abs(V), axis=0), np.arange(n)]
    V = V * (np.conj(peak) / np.abs(peak))[None, :]
    # stable sort on energy, then re-order near-degenerate clusters by m_F descending
    order = np.argsort(energies, kind="stable")
    if np.any(np.diff(energies[order]) <= DEGENERACY_TOL):
        order = list(order)
        final, start = [], 0
        while start < n:
            stop = start + 1
            while stop < n and energies[order[stop]] - energies[order[stop - 1]] <= DEGENERACY_TOL:
                stop += 1
            final.extend(sorted(order[start:stop], key=lambda k: -mf_col[k]))
            start = stop
        order = np.array(final)
    return EigenSystem(B, energies[order], V[:, order], tuple(mf_col[k] for k in order), tuple(basis))


@lru_cache(maxsize=1024)
def _asymptotic_order(level: LevelParams, I: SpinQuantum, m_F: Fraction,
                      constants: PhysicalConstants) -> tuple[Label, ...]:
    """Product states of one m_F block sorted by their high-field energy."""
    H0 = build_hamiltonian(level, I, 0.0, constants)
    diag0 = dict(zip(H0.basis, np.diag(H0.matrix)))
    cands = [(mi, mj) for mi, mj in H0.basis if mi + mj == m_F]
    mu_J = level.g_J * constants.mu_B_over_h
    mu_I = level.g_I * constants.mu_N_over_h
    keyed = sorted(((mu_J * float(mj) - mu_I * float(mi), float(diag0[(mi, mj)])), (mi, mj)) for mi, mj in cands)
    scale = abs(mu_J) + abs(mu_I) + 1.0
    for (k1, l1), (k2, l2) in zip(keyed, keyed[1:]):
        if abs(k1[0] - k2[0]) <= 1e-12 * scale and abs(k1[1] - k2[1]) <= DEGENERACY_TOL:
            raise LabelAmbiguity(f"{format_label(l1)} and {format_label(l2)} are degenerate at all fields")
    return tuple(lab for _, lab in keyed)


def label_by_rank(es: EigenSystem, level: LevelParams, I,
                  constants: PhysicalConstants = PhysicalConstants()) -> EigenSystem:
    """Attach adiabatic labels using the non-crossing rule.

    Levels of equal m_F never cross as B varies, so within each m_F block the
    energy rank at any B > 0 equals the rank at B -> infinity, where the
    states are (m_I, m_J) product states ordered by their Zeeman slopes.
    """
    I = SpinQuantum.of(I)
    if es.m_F is None:
        raise ValueError("eigensystem has no m_F labels")
    labels: list[Label | None] = [None] * len(es)
    for m in set(es.m_F):
        idx = [k for k, mf in enumerate(es.m_F) if mf == m]
        idx.sort(key=lambda k: es.energies[k])
        e = es.energies[idx]
        if np.any(np.diff(e) <= DEGENERACY_TOL):
            raise LabelAmbiguity(f"degenerate energies inside the m_F={format_half(m)} block at B={es.B}")
        for k, lab in zip(idx, _asymptotic_order(level, I, m, constants)):
            labels[k] = lab
    return replace(es, labels=tuple(labels))


def dominant_labels(es: EigenSystem) -> tuple[Label, ...]:
    """Label each eigenvector by its largest product-basis component."""
    if es.basis is None:
        raise ValueError("eigensystem has no basis labels")
    labels = tuple(es.basis[int(np.argmax(np.abs(es.vectors[:, k])))] for k in range(len(es)))
    if len(set(labels)) != len(labels):
        raise LabelAmbiguity(f"dominant components are not unique at B={es.B}")
    return labels


def eigensystem(species: str | SpeciesParams, term: str, B: float,
                registry: SpeciesRegistry | None = None) -> EigenSystem:
    """Diagonalise one level of a species at field B and attach adiabatic labels."""
    sp = resolve(species, registry)
    level = sp.level(term)
    es = diagonalize(build_hamiltonian(level, sp.I, B, sp.constants), B)
    return label_by_rank(es, level, sp.I, sp.constants)


BREIT_RABI_VARIANTS = ("conventional", "as_printed")


def breit_rabi_energy(level: LevelParams, B: float, m_F, branch: int, I=Fraction(1, 2),
                      constants: PhysicalConstants = PhysicalConstants(),
                      variant: str = "conventional") -> float:
    """Closed-form energy (MHz) of an I = 1/2 level.

    E = -E_HF/(2(2J+1)) + g_J mu_B B m_F +/- (E_HF/2) sqrt(1 - 4 m_F x/(2J+1) + x^2)
    with E_HF = A(J + 1/2).  ``variant="conventional"`` uses
    x = (g_J mu_B + g_I mu_N) B / E_HF, which reproduces the diagonalised
    Hamiltonian exactly; ``"as_printed"`` swaps the magnetons,
    x = (g_I mu_B + g_J mu_N) B / E_HF, and is kept for comparison only.

    For the stretched states |m_F| = J + 1/2 only ``branch=+1`` exists and the
    square root is replaced by its signed form (1 - sgn(m_F) x).
    """
    I = SpinQuantum.of(I)
    if I.twice_value != 1 or level.Q != 0:
        raise NotApplicable("Breit-Rabi form needs I = 1/2 and Q = 0")
    if level.A == 0:
        raise NotApplicable("Breit-Rabi form needs a nonzero hyperfine constant")
    if variant not in BREIT_RABI_VARIANTS:
        raise ValueError(f"variant must be one of {BREIT_RABI_VARIANTS}")
    J = float(level.J)
    m_F = as_half_integer(m_F)
    if abs(m_F) > J + 0.5:
        raise NoSuchState(f"m_F={format_half(m_F)} out of range")
    mu_B, mu_N = constants.mu_B_over_h, constants.mu_N_over_h
    E_hf = level.A * (J + 0.5)
    if variant == "conventional":
        x = (level.g_J * mu_B + level.g_I * mu_N) * B / E_hf
    else:
        x = (level.g_I * mu_B + level.g_J * mu_N) * B / E_hf
    mf = float(m_F)
    base = -E_hf / (2 * (2 * J + 1)) + level.g_J * mu_B * B * mf
    if abs(mf) == J + 0.5:
        if branch != 1:
            raise NoSuchState("stretched states only have the +1 branch")
        return base + 0.5 * E_hf * (1 - np.sign(mf) * x)
    arg = 1 - 4 * mf * x / (2 * J + 1) + x * x
    if arg < 0:
        if arg < -1e-12:
            raise ValueError(f"negative Breit-Rabi discriminant {arg}")
        arg = 0.0
    if branch not in (1, -1):
        raise ValueError("branch must be +1 or -1")
    return base + branch * 0.5 * E_hf * np.sqrt(arg)


def breit_rabi_spectrum(level: LevelParams, B: float, I=Fraction(1, 2),
                        constants: PhysicalConstants = PhysicalConstants(),
                        variant: str = "conventional") -> dict[Fraction, list[float]]:
    """All Breit-Rabi energies grouped by m_F, ascending within each block."""
    J = level.J
    out = {}
    top = J.value + Fraction(1, 2)
    m = top
    while m >= -top:
        branches = (1,) if abs(m) == top else (1, -1)
        out[m] = sorted(breit_rabi_energy(level, B, m, b, I, constants, variant) for b in branches)
        m -= 1
    return out


@dataclass(frozen=True)
class ExpansionCoefficients:
    """Amplitudes c_q on |m_I = m_F - q> |m_J = q>."""

    m_F: Fraction
    c: Mapping[int, complex]

    def norm(self) -> float:
        return float(sum(abs(v) ** 2 for v in self.c.values()))


def expansion_coefficients(es: EigenSystem, state) -> ExpansionCoefficients:
    k = es.index(state)
    if es.basis is None or es.m_F is None:
        raise ValueError("eigensystem has no basis labels")
    js = {mj for _, mj in es.basis}
    if js - {Fraction(-1), Fraction(0), Fraction(1)} or len(js) != 3:
        raise NotApplicable("expansion coefficients are defined for J = 1 manifolds")
    m_F = es.m_F[k]
    v = es.vectors[:, k]
    c = {}
    for q in (1, 0, -1):
        lab = (m_F - q, Fraction(q))
        c[q] = complex(v[es.basis.index(lab)]) if lab in es.basis else 0j
    return ExpansionCoefficients(m_F, c)


def splitting(es: EigenSystem, a, b) -> float:
    """Signed E(a) - E(b) in MHz."""
    return es.energy(a) - es.energy(b)


@dataclass
class ZeemanDiagram:
    species: str
    term: str
    B_grid: np.ndarray
    curves: dict[Label, np.ndarray] = field(default_factory=dict)

    def ordered_labels(self) -> list[Label]:
        return sorted(self.curves, key=lambda lab: (-lab[1], -lab[0]))

    def rows(self) -> Iterable[tuple[float, Label, float]]:
        labels = self.ordered_labels()
        for i, B in enumerate(self.B_grid):
            for lab in labels:
                yield float(B), lab, float(self.curves[lab][i])

    def to_csv(self, stream) -> None:
        stream.write("B_T,label_mI,label_mJ,energy_MHz\n")
        for B, (mi, mj), e in self.rows():
            stream.write(f"{B:.11e},{format_half(mi)},{format_half(mj)},{e:.11e}\n")

    def to_dict(self) -> dict:
        return {
            "species": self.species,
            "term": self.term,
            "B_grid": [float(b) for b in self.B_grid],
            "curves": [
                {"m_I": format_half(mi), "m_J": format_half(mj), "energy_MHz": [float(e) for e in self.curves[(mi, mj)]]}
                for mi, mj in self.ordered_labels()
            ],
        }

    def to_json(self, stream) -> None:
        json.dump(self.to_dict(), stream, indent=1)
        stream.write("\n")


def _propagate_labels(systems: Sequence[EigenSystem], min_overlap: float = 0.5) -> list[tuple[Label, ...]]:
    """Carry dominant-component labels from the last (highest-field) system downward."""
    labels = [None] * len(systems)
    labels[-1] = dominant_labels(systems[-1])
    for i in range(len(systems) - 2, -1, -1):
        prev, cur = systems[i + 1], systems[i]
        prev_labels = labels[i + 1]
        cur_labels: list[Label | None] = [None] * len(cur)
        for m in set(cur.m_F):
            pi = [k for k, mf in enumerate(prev.m_F) if mf == m]
            ci = [k for k, mf in enumerate(cur.m_F) if mf == m]
            ov = np.abs(prev.vectors[:, pi].conj().T @ cur.vectors[:, ci])
            rows, cols = linear_sum_assignment(-ov)
            worst = ov[rows, cols].min()
            if worst < min_overlap:
                raise LabelAmbiguity(
                    f"overlap {worst:.3f} < {min_overlap} between B={prev.B:g} T and B={cur.B:g} T; refine the grid")
            for r, c in zip(rows, cols):
                cur_labels[ci[c]] = prev_labels[pi[r]]
        labels[i] = tuple(cur_labels)
    return labels


def zeeman_sweep(species: str | SpeciesParams, term: str, B_min: float, B_max: float, n_points: int,
                 registry: SpeciesRegistry | None = None, workers: int | None = None) -> ZeemanDiagram:
    """Energies along a field grid with labels propagated by eigenvector overlap."""
    if not 0 <= B_min < B_max:
        raise ValueError("need 0 <= B_min < B_max")
    if n_points < 2:
        raise ValueError("need n_points >= 2")
    sp = resolve(species, registry)
    level = sp.level(term)
    grid = np.linspace(B_min, B_max, n_points)

    def point(B):
        return diagonalize(build_hamiltonian(level, sp.I, float(B), sp.constants), float(B))

    if workers and workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            systems = list(pool.map(point, grid))
    else:
        systems = [point(B) for B in grid]
    labels = _propagate_labels(systems)
    all_labels = labels[-1]
    curves = {lab: np.empty(n_points) for lab in all_labels}
    for i, (es, labs) in enumerate(zip(systems, labels)):
        for k, lab in enumerate(labs):
            curves[lab][i] = es.energies[k]
    return ZeemanDiagram(sp.name, term, grid, curves)


def derivative_bound(level: LevelParams, I, constants: PhysicalConstants = PhysicalConstants()) -> float:
    """Upper bound on |dE/dB| (MHz/T) for any eigenvalue of the level."""
    I = SpinQuantum.of(I)
    return abs(level.g_J) * constants.mu_B_over_h * float(level.J) + abs(level.g_I) * constants.mu_N_over_h * float(I)
