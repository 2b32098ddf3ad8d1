"""Spontaneous-emission transfer of nuclear-spin coherence from 1P1 to 1S0.

State space for the master equation is the 3(2I+1) excited eigenstates
followed by the 2I+1 ground sublevels.  Jump operators

    L_q = sqrt(Gamma) sum_k c_q(k) |g, m_I = m_F(k) - q><e, k|

run over every excited eigenstate k, where c_q(k) is the amplitude of k on
|m_I = m_F - q>|m_J = q>.

Units: energies and linewidths are stored as ordinary frequencies in MHz
(E/h, Gamma/2pi); time is in microseconds.  Dynamical formulas work with
angular frequencies in rad/us, and :func:`to_angular` is the only place the
factor 2 pi is applied.
"""

from __future__ import annotations

import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from fractions import Fraction
from typing import Callable, Mapping, Sequence

import numpy as np
import scipy.linalg
from scipy.integrate import solve_ivp

from .angular import OperatorMatrix
from .errors import DimensionMismatch, InvalidDensityMatrix, NotApplicable, StepFailure
from .species import SpeciesParams, SpeciesRegistry, as_half_integer, format_half, resolve
from .structure import EigenSystem, eigensystem, expansion_coefficients

TWO_PI = 2 * np.pi
EXCITED_TERM = "1P1"
GROUND_TERM = "1S0"
LOW_PURITY = 0.9


def to_angular(freq_MHz):
    """MHz (cycles/us) -> rad/us."""
    return TWO_PI * freq_MHz


@dataclass(frozen=True)
class QubitEncoding:
    """Nuclear projections carrying |up> and |down>.

    The excited qubit states are the m_J = 0 branch states with
    m_F = m_up and m_F = m_down.
    """

    m_up: Fraction
    m_down: Fraction

    def __post_init__(self):
        object.__setattr__(self, "m_up", as_half_integer(self.m_up))
        object.__setattr__(self, "m_down", as_half_integer(self.m_down))
        if self.m_up == self.m_down:
            raise ValueError("m_up and m_down must differ")

    @classmethod
    def pair(cls, m) -> "QubitEncoding":
        m = abs(as_half_integer(m))
        return cls(m, -m)

    @classmethod
    def parse(cls, text: str) -> "QubitEncoding":
        """``"1/2"`` or ``"pair:9/2"`` -> (+m, -m); ``"3/2,-1/2"`` -> explicit pair."""
        text = text.strip()
        if text.startswith("pair:"):
            return cls.pair(text[5:])
        if "," in text:
            up, down = text.split(",", 1)
            return cls(up, down)
        return cls.pair(text)

    @property
    def excited_labels(self):
        return (self.m_up, Fraction(0)), (self.m_down, Fraction(0))

    def __str__(self) -> str:
        return f"({format_half(self.m_up)},{format_half(self.m_down)})"


@dataclass(frozen=True)
class JumpOperatorSet:
    """L_q in units of sqrt(rad/us); sum_q L_q^dag L_q = 2 pi Gamma P_e."""

    ops: Mapping[int, np.ndarray]
    Gamma: float  # MHz
    n_excited: int
    n_ground: int

    @property
    def dim(self) -> int:
        return self.n_excited + self.n_ground

    def excited_projector(self) -> np.ndarray:
        P = np.zeros((self.dim, self.dim))
        P[: self.n_excited, : self.n_excited] = np.eye(self.n_excited)
        return P

    def as_list(self) -> list[np.ndarray]:
        return [self.ops[q] for q in (0, 1, -1)]


def jump_operators(excited: EigenSystem, ground: EigenSystem, Gamma: float) -> JumpOperatorSet:
    if excited.basis is None or ground.basis is None:
        raise ValueError("eigensystems need basis labels")
    I_exc = {mi for mi, _ in excited.basis}
    I_gnd = {mi for mi, _ in ground.basis}
    if I_exc != I_gnd:
        raise DimensionMismatch("excited and ground manifolds have different nuclear spin")
    if {mj for _, mj in ground.basis} != {Fraction(0)}:
        raise NotApplicable("ground manifold must have J = 0")
    ne, ng = len(excited), len(ground)
    ground_index = {ground.m_F[k]: k for k in range(ng)}
    amp = np.sqrt(to_angular(Gamma))
    ops = {}
    for q in (0, 1, -1):
        L = np.zeros((ne + ng, ne + ng), dtype=complex)
        for k in range(ne):
            cq = expansion_coefficients(excited, k).c[q]
            target = excited.m_F[k] - q
            if cq != 0 and target in ground_index:
                L[ne + ground_index[target], k] = amp * cq
        ops[q] = L
    return JumpOperatorSet(ops, Gamma, ne, ng)


def combined_hamiltonian(excited: EigenSystem, ground: EigenSystem) -> np.ndarray:
    """Diagonal Hamiltonian (MHz) in the excited-eigenstate + ground-sublevel basis."""
    return np.diag(np.concatenate([excited.energies, ground.energies]))


def check_density_matrix(rho: np.ndarray, herm_tol: float = 1e-10, trace_tol: float = 1e-9,
                         pos_tol: float = 1e-9) -> None:
    herm = np.max(np.abs(rho - rho.conj().T))
    if herm > herm_tol:
        raise InvalidDensityMatrix(f"Hermiticity violated by {herm:.2e}")
    tr = abs(np.trace(rho) - 1)
    if tr > trace_tol:
        raise InvalidDensityMatrix(f"trace deviates from 1 by {tr:.2e}")
    lo = np.linalg.eigvalsh(0.5 * (rho + rho.conj().T))[0]
    if lo < -pos_tol:
        raise InvalidDensityMatrix(f"negative eigenvalue {lo:.2e}")


def liouvillian(H, L: JumpOperatorSet | Sequence[np.ndarray]) -> np.ndarray:
    """Superoperator (rad/us) acting on column-stacked density matrices."""
    Hw = to_angular(np.asarray(H, dtype=complex))
    ops = L.as_list() if isinstance(L, JumpOperatorSet) else list(L)
    d = Hw.shape[0]
    eye = np.eye(d)
    S = -1j * (np.kron(eye, Hw) - np.kron(Hw.T, eye))
    for Lq in ops:
        K = Lq.conj().T @ Lq
        S += np.kron(Lq.conj(), Lq) - 0.5 * np.kron(eye, K) - 0.5 * np.kron(K.T, eye)
    return S


# Dormand-Prince 5(4) tableau
_C = np.array([0, 1 / 5, 3 / 10, 4 / 5, 8 / 9, 1, 1])
_A = [
    [],
    [1 / 5],
    [3 / 40, 9 / 40],
    [44 / 45, -56 / 15, 32 / 9],
    [19372 / 6561, -25360 / 2187, 64448 / 6561, -212 / 729],
    [9017 / 3168, -355 / 33, 46732 / 5247, 49 / 176, -5103 / 18656],
    [35 / 384, 0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84],
]
_B = np.array(_A[6] + [0])
_E = np.array([71 / 57600, 0, -71 / 16695, 71 / 1920, -17253 / 339200, 22 / 525, -1 / 40])


class _RotatingFrameGenerator:
    """Lindblad right-hand side in the frame rotating with diag(H)."""

    def __init__(self, H, ops: Sequence[np.ndarray]):
        Hw = to_angular(np.asarray(H, dtype=complex))
        self.omega = np.real(np.diag(Hw)).copy()
        self.V = Hw - np.diag(np.diag(Hw))
        self.has_V = bool(np.any(self.V))
        self.ops = [np.asarray(L, dtype=complex) for L in ops if np.any(L)]
        self.K = sum((L.conj().T @ L for L in self.ops), np.zeros_like(Hw))

    def phases(self, t: float) -> np.ndarray:
        u = np.exp(1j * self.omega * t)
        return u[:, None] * u.conj()[None, :]

    def __call__(self, t: float, rho: np.ndarray) -> np.ndarray:
        P = self.phases(t)
        Kt = self.K * P
        out = -0.5 * (Kt @ rho + rho @ Kt)
        for L in self.ops:
            Lt = L * P
            out += Lt @ rho @ Lt.conj().T
        if self.has_V:
            Vt = self.V * P
            out -= 1j * (Vt @ rho - rho @ Vt)
        return out


def evolve(rho0: np.ndarray, H, L: JumpOperatorSet | Sequence[np.ndarray], t: float,
           dt_max: float | None = None, method: str = "rk", rtol: float = 1e-10, atol: float = 1e-12,
           check: bool = True, max_steps: int = 2_000_000,
           on_step: Callable[[float, np.ndarray], None] | None = None) -> np.ndarray:
    """Propagate the Lindblad master equation for time ``t`` (us).

    ``method="rk"``: adaptive Dormand-Prince 5(4) in the frame rotating with
    the diagonal of H, so Bohr frequencies are handled exactly and step size
    is set by decay rates and off-diagonal couplings.  With ``check`` every
    accepted step is tested for Hermiticity, unit trace and positivity.

    ``method="expm"``: exponential of the Liouvillian superoperator; meant as
    a cross-check for dimensions up to ~40.

    ``on_step(t, rho)`` is called after every accepted step (lab frame).
    """
    rho0 = np.asarray(rho0, dtype=complex)
    if t < 0:
        raise ValueError("t must be >= 0")
    if check:
        check_density_matrix(rho0)
    ops = L.as_list() if isinstance(L, JumpOperatorSet) else list(L)
    if t == 0:
        return rho0.copy()
    if method == "expm":
        S = liouvillian(H, ops)
        vec = scipy.linalg.expm(S * t) @ rho0.reshape(-1, order="F")
        rho = vec.reshape(rho0.shape, order="F")
        if check:
            check_density_matrix(rho)
        return rho
    if method != "rk":
        raise ValueError(f"unknown method {method!r}")

    f = _RotatingFrameGenerator(H, ops)
    h_cap = t if dt_max is None else min(dt_max, t)
    y = rho0.copy()
    k1 = f(0.0, y)
    scale0 = np.max(np.abs(k1)) / max(np.max(np.abs(y)), 1e-300)
    h = min(h_cap, 0.01 / scale0) if scale0 > 0 else h_cap
    h_min = 1e-14 * t
    tc, steps = 0.0, 0
    while tc < t:
        if steps >= max_steps:
            raise StepFailure(f"exceeded {max_steps} steps")
        h = min(h, t - tc, h_cap)
        ks = [k1]
        for i in range(1, 7):
            yi = y + h * sum(a * k for a, k in zip(_A[i], ks) if a)
            ks.append(f(tc + _C[i] * h, yi))
        y_new = y + h * sum(b * k for b, k in zip(_B, ks) if b)
        err = h * sum(e * k for e, k in zip(_E, ks) if e)
        sc = atol + rtol * np.maximum(np.abs(y), np.abs(y_new))
        norm = np.sqrt(np.mean(np.abs(err / sc) ** 2))
        steps += 1
        if norm <= 1.0:
            tc = t if t - (tc + h) <= h_min else tc + h
            y, k1 = y_new, ks[6]
            if check:
                try:
                    check_density_matrix(y)
                except InvalidDensityMatrix as exc:
                    raise StepFailure(f"accepted step at t={tc:.3e} us broke a density-matrix invariant: {exc}") from exc
            if on_step is not None:
                on_step(tc, y * np.conj(f.phases(tc)))
            fac = 5.0 if norm == 0 else min(5.0, max(0.2, 0.9 * norm ** -0.2))
        else:
            fac = max(0.2, 0.9 * norm ** -0.2)
        h *= fac
        if h < h_min and tc < t:
            raise StepFailure(f"step size {h:.2e} us below minimum at t={tc:.3e} us")
    return y * np.conj(f.phases(t))


def coherence_closed_form(rho_e0: complex, Gamma: float, Gamma_prime: float, delta: float,
                          Delta_g: float, t: float) -> complex:
    """Ground coherence long after decay: rho_e0 Gamma'/(Gamma - i delta) exp(-i Delta_g t).

    All frequency arguments in MHz, t in us; requires t >= 10 / (2 pi Gamma).
    """
    G, Gp, d, Dg = (to_angular(x) for x in (Gamma, Gamma_prime, delta, Delta_g))
    if t < 10 / G:
        raise ValueError(f"closed form needs t >= 10/Gamma = {10 / G:.3e} us")
    return rho_e0 * Gp / (G - 1j * d) * np.exp(-1j * Dg * t)


def coherence_ode(rho_e0: complex, Gamma: float, Gamma_prime: float, Delta_e: float,
                  Delta_g: float, t: float, rho_g0: complex = 0j) -> tuple[complex, complex]:
    """Integrate the coupled excited/ground coherence equations numerically.

    d rho_e/dt = (-i Delta_e - Gamma) rho_e
    d rho_g/dt = -i Delta_g rho_g + Gamma' rho_e

    Returns ``(rho_e(t), rho_g(t))``.
    """
    G, Gp, De, Dg = (to_angular(x) for x in (Gamma, Gamma_prime, Delta_e, Delta_g))

    def rhs(_, y):
        re = y[0] + 1j * y[1]
        rg = y[2] + 1j * y[3]
        dre = (-1j * De - G) * re
        drg = -1j * Dg * rg + Gp * re
        return [dre.real, dre.imag, drg.real, drg.imag]

    y0 = [rho_e0.real, rho_e0.imag, rho_g0.real, rho_g0.imag]
    sol = solve_ivp(rhs, (0.0, t), y0, method="DOP853", rtol=1e-13, atol=1e-15)
    if not sol.success:
        raise StepFailure(sol.message)
    y = sol.y[:, -1]
    return complex(y[0], y[1]), complex(y[2], y[3])


@dataclass(frozen=True)
class TransferResult:
    B: float
    Gamma: float
    Gamma_prime: float
    delta: float
    Delta_e: float
    Delta_g: float
    fidelity: float
    purity: float

    @property
    def low_purity(self) -> bool:
        return self.purity < LOW_PURITY


@dataclass
class TransferSetup:
    """Everything needed to simulate one qubit transfer at one field."""

    species: SpeciesParams
    encoding: QubitEncoding
    excited: EigenSystem
    ground: EigenSystem

    @property
    def Gamma(self) -> float:
        return self.species.level(EXCITED_TERM).gamma

    def indices(self) -> tuple[int, int, int, int]:
        """Combined-basis indices of (e_up, e_down, g_up, g_down)."""
        (lu, ld) = self.encoding.excited_labels
        ne = len(self.excited)
        gu = ne + self.ground.index((self.encoding.m_up, 0))
        gd = ne + self.ground.index((self.encoding.m_down, 0))
        return self.excited.index(lu), self.excited.index(ld), gu, gd


def transfer_setup(species: str | SpeciesParams, encoding: QubitEncoding, B: float,
                   registry: SpeciesRegistry | None = None) -> TransferSetup:
    sp = resolve(species, registry)
    for m in (encoding.m_up, encoding.m_down):
        if not sp.I.allows(m):
            raise ValueError(f"m_I={format_half(m)} not allowed for I={sp.I}")
    return TransferSetup(sp, encoding, eigensystem(sp, EXCITED_TERM, B), eigensystem(sp, GROUND_TERM, B))


def transfer_fidelity(species: str | SpeciesParams, encoding: QubitEncoding, B: float,
                      registry: SpeciesRegistry | None = None) -> TransferResult:
    """F = Gamma'^2 / (Gamma^2 + delta^2) with Gamma' = Gamma c_0(up) c_0(down)*.

    Gamma' keeps the sign of the phase-fixed overlap.  It turns negative at
    weak field where c_0 stops dominating both states (171Yb below about
    7.7 mT); F depends only on Gamma'^2 and is small there anyway.
    """
    s = transfer_setup(species, encoding, B, registry)
    lu, ld = encoding.excited_labels
    c_up = expansion_coefficients(s.excited, lu).c[0]
    c_dn = expansion_coefficients(s.excited, ld).c[0]
    Gamma = s.Gamma
    Gp = Gamma * (c_up * np.conj(c_dn)).real
    Delta_e = s.excited.energy(lu) - s.excited.energy(ld)
    Delta_g = s.ground.energy((encoding.m_up, 0)) - s.ground.energy((encoding.m_down, 0))
    delta = Delta_g - Delta_e
    fid = Gp**2 / (Gamma**2 + delta**2)
    purity = min(abs(c_up) ** 2, abs(c_dn) ** 2)
    return TransferResult(float(B), Gamma, float(Gp), float(delta), float(Delta_e), float(Delta_g), float(fid),
                          float(purity))


@dataclass(frozen=True)
class MasterEquationTransfer:
    B: float
    t: float
    rho_e0: complex
    rho_g: complex
    fidelity: float
    algebraic: TransferResult

    @property
    def relative_deviation(self) -> float:
        return abs(self.fidelity - self.algebraic.fidelity) / self.algebraic.fidelity


def qubit_density_matrix(setup: TransferSetup, alpha: complex = 2**-0.5, beta: complex = 2**-0.5) -> np.ndarray:
    """alpha|e,up> + beta|e,down> as a density matrix on the combined space."""
    iu, idn, _, _ = setup.indices()
    d = len(setup.excited) + len(setup.ground)
    psi = np.zeros(d, dtype=complex)
    psi[iu], psi[idn] = alpha, beta
    psi /= np.linalg.norm(psi)
    return np.outer(psi, psi.conj())


def master_equation_transfer(species: str | SpeciesParams, encoding: QubitEncoding, B: float,
                             decay_times: float = 20.0, method: str = "rk",
                             registry: SpeciesRegistry | None = None) -> MasterEquationTransfer:
    """Fidelity extracted from full Lindblad evolution over ``decay_times``/Gamma."""
    s = transfer_setup(species, encoding, B, registry)
    L = jump_operators(s.excited, s.ground, s.Gamma)
    H = combined_hamiltonian(s.excited, s.ground)
    rho0 = qubit_density_matrix(s)
    iu, idn, gu, gd = s.indices()
    t = decay_times / to_angular(s.Gamma)
    rho = evolve(rho0, H, L, t, method=method)
    fid = abs(rho[gu, gd]) ** 2 / abs(rho0[iu, idn]) ** 2
    return MasterEquationTransfer(float(B), t, complex(rho0[iu, idn]), complex(rho[gu, gd]), float(fid),
                                  transfer_fidelity(s.species, encoding, B))


@dataclass
class FidelityCurve:
    species: str
    encoding: QubitEncoding
    points: list[TransferResult]

    @property
    def B(self) -> np.ndarray:
        return np.array([p.B for p in self.points])

    @property
    def fidelity(self) -> np.ndarray:
        return np.array([p.fidelity for p in self.points])

    def to_csv(self, stream) -> None:
        stream.write("B_T,fidelity,Gamma_prime_MHz,delta_MHz,purity\n")
        for p in self.points:
            stream.write(f"{p.B:.11e},{p.fidelity:.11e},{p.Gamma_prime:.11e},{p.delta:.11e},{p.purity:.11e}\n")

    def to_dict(self) -> dict:
        return {
            "species": self.species,
            "encoding": {"m_up": format_half(self.encoding.m_up), "m_down": format_half(self.encoding.m_down)},
            "points": [
                {"B_T": p.B, "fidelity": p.fidelity, "Gamma_prime_MHz": p.Gamma_prime, "delta_MHz": p.delta,
                 "purity": p.purity, "low_purity": p.low_purity}
                for p in self.points
            ],
        }

    def to_json(self, stream) -> None:
        json.dump(self.to_dict(), stream, indent=1)
        stream.write("\n")


def fidelity_sweep(species: str | SpeciesParams, encoding: QubitEncoding, B_min: float, B_max: float,
                   n_points: int, registry: SpeciesRegistry | None = None,
                   workers: int | None = None) -> FidelityCurve:
    if n_points < 1:
        raise ValueError("need n_points >= 1")
    if n_points > 1 and not 0 <= B_min < B_max:
        raise ValueError("need 0 <= B_min < B_max")
    sp = resolve(species, registry)
    grid = [float(B_min)] if n_points == 1 else np.linspace(B_min, B_max, n_points)

    def point(B):
        return transfer_fidelity(sp, encoding, float(B))

    if workers and workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            pts = list(pool.map(point, grid))
    else:
        pts = [point(B) for B in grid]
    return FidelityCurve(sp.name, encoding, pts)
