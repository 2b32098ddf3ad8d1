"""Resolved-sideband cooling on the clock transition, at rate-equation level.

One cooling cycle acts on the vibrational distribution p[n] of the ground
state:

1. A pi pulse on the first red sideband moves n -> n-1 into 3P0 with
   probability s_n (``pulse="ideal"``: s_n = 1 for n >= 1; ``"rabi"``:
   s_n = sin^2(pi sqrt(n) / 2) for a pulse calibrated on n = 1).  Atoms not
   transferred may instead be excited off-resonantly on the carrier with
   probability ``carrier_excitation`` (n unchanged).
2. Quenching through 1P1 returns every excited atom to 1S0.  The emitted
   photon kicks the atom: n -> n' with probability |<n'|exp(i eta (a + a^dag))|n>|^2
   (``branching="franck-condon"``) or, to first order in eta^2,
   n -> n+1 with eta^2 (n+1), n -> n-1 with eta^2 n
   (``branching="lamb-dicke"``).

The analytic limit <n> = gamma^2 / (2 omega_v)^2 is :func:`steady_state_n`
and is never mixed into the cycle simulation.  Nuclear spin is not tracked
here.
"""

from __future__ import annotations

import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace
from math import pi, sqrt

import numpy as np
import scipy.constants as sc
import scipy.linalg
from scipy.special import eval_genlaguerre, gammaln

from .errors import LambDickeViolation, TruncationOverflow
from .species import SpeciesParams, SpeciesRegistry, resolve

TRUNCATION_LIMIT = 1e-6

# clock linewidths reproducing the quoted orders of magnitude exactly:
# (gamma / (2 omega_v))^2 = 1e-15 at 90 kHz and 1e-18 at 260 kHz
GAMMA_YB_FOR_1E15_HZ = 2 * 90e3 * sqrt(1e-15)
GAMMA_SR_FOR_1E18_HZ = 2 * 260e3 * sqrt(1e-18)


@dataclass(frozen=True)
class TrapParams:
    omega_v: float  # kHz, omega_v / 2 pi
    lattice_wavelength: float  # nm
    mass: float  # amu

    def __post_init__(self):
        if not (self.omega_v > 0 and self.lattice_wavelength > 0 and self.mass > 0):
            raise ValueError("trap frequency, lattice wavelength and mass must be positive")


def lamb_dicke(trap: TrapParams, transition_wavelength: float) -> float:
    """eta = k x_zpf = (2 pi / lambda) sqrt(hbar / (2 m omega_v))."""
    m = trap.mass * sc.atomic_mass
    omega = 2 * pi * trap.omega_v * 1e3
    return 2 * pi / (transition_wavelength * 1e-9) * sqrt(sc.hbar / (2 * m * omega))


def steady_state_n(gamma_clock: float, omega_v: float) -> float:
    """gamma^2 / (2 omega_v)^2 for gamma/2pi in Hz and omega_v/2pi in kHz."""
    w = omega_v * 1e3
    if gamma_clock >= 0.1 * w:
        warnings.warn("linewidth is not small compared with the trap frequency; sidebands unresolved",
                      stacklevel=2)
    return (gamma_clock / (2 * w)) ** 2


@dataclass(frozen=True)
class CoolingParams:
    trap: TrapParams
    gamma_clock: float  # Hz
    quench_rate: float  # 1/us
    n_max: int
    pulse_time: float  # us
    clock_wavelength: float = 698.45  # nm
    recoil_wavelength: float = 460.86  # nm, quench photon
    pulse: str = "ideal"
    branching: str = "franck-condon"
    eta_recoil: float | None = None  # overrides the value from recoil_wavelength
    carrier_excitation: float | None = None  # overrides the pulse-derived estimate
    recycle_lifetimes: float = 10.0

    def __post_init__(self):
        if self.n_max < 5:
            raise ValueError("n_max must be >= 5")
        if not (self.gamma_clock >= 0 and self.quench_rate > 0 and self.pulse_time > 0):
            raise ValueError("rates and pulse time must be positive")
        if self.pulse not in ("ideal", "rabi"):
            raise ValueError(f"unknown pulse model {self.pulse!r}")
        if self.branching not in ("franck-condon", "lamb-dicke"):
            raise ValueError(f"unknown branching model {self.branching!r}")

    @property
    def eta(self) -> float:
        if self.eta_recoil is not None:
            return self.eta_recoil
        return lamb_dicke(self.trap, self.recoil_wavelength)

    @property
    def eta_clock(self) -> float:
        return lamb_dicke(self.trap, self.clock_wavelength)

    @property
    def p_carrier(self) -> float:
        """Off-resonant carrier excitation per pulse, averaged over the Rabi oscillation.

        The pulse is a pi pulse on the n=1 red sideband, so the carrier Rabi
        frequency is pi / (eta_clock * pulse_time) and its detuning is omega_v.
        """
        if self.carrier_excitation is not None:
            return self.carrier_excitation
        rabi = pi / (self.eta_clock * self.pulse_time)
        detuning = 2 * pi * self.trap.omega_v * 1e-3
        return 0.5 * rabi**2 / (rabi**2 + detuning**2)

    @property
    def cycle_time(self) -> float:
        return self.pulse_time + self.recycle_lifetimes / self.quench_rate

    def effective_gamma(self) -> float:
        """Clock linewidth (Hz) broadened by the quench rate."""
        return self.gamma_clock + self.quench_rate * 1e6 / (2 * pi)


def cooling_params(species: str | SpeciesParams, omega_v: float, registry: SpeciesRegistry | None = None,
                   **overrides) -> CoolingParams:
    """Defaults from the species registry; keyword arguments override any field."""
    sp = resolve(species, registry)
    clock = sp.level("3P0")
    kw = dict(
        trap=TrapParams(omega_v, 2 * sp.clock_wavelength_nm, sp.mass_amu),
        gamma_clock=(clock.clock_linewidth or clock.gamma) * 1e6,
        quench_rate=1.0,
        n_max=40,
        pulse_time=100.0,
        clock_wavelength=sp.clock_wavelength_nm,
        recoil_wavelength=sp.quench_wavelength_nm,
    )
    kw.update(overrides)
    return CoolingParams(**kw)


def recoil_branching(eta: float, n_max: int, model: str = "franck-condon") -> np.ndarray:
    """R[m', m]: probability that a recycle photon takes n = m to n = m'.

    Rows run over 0..n_max; columns may sum to less than one, the remainder
    being population kicked above n_max.
    """
    n = np.arange(n_max + 1)
    if model == "lamb-dicke":
        e2 = eta * eta
        if e2 * (2 * n_max + 1) > 1:
            raise LambDickeViolation(
                f"eta^2 (2 n_max + 1) = {e2 * (2 * n_max + 1):.3g} > 1; use branching='franck-condon'")
        R = np.diag(1 - e2 * (2 * n + 1))
        R[n[1:], n[:-1]] = e2 * n[1:]
        R[n[:-1], n[1:]] = e2 * n[1:]
        return R
    if model != "franck-condon":
        raise ValueError(f"unknown branching model {model!r}")
    x = eta * eta
    if x == 0:  # also catches eta small enough for eta^2 to underflow
        return np.eye(n_max + 1)
    lo = np.minimum.outer(n, n)
    hi = np.maximum.outer(n, n)
    d = hi - lo
    log_amp = -x + d * np.log(x) + gammaln(lo + 1) - gammaln(hi + 1)
    lag = eval_genlaguerre(lo, d, x)
    return np.exp(log_amp) * lag**2


def sideband_success(n_max: int, pulse: str) -> np.ndarray:
    n = np.arange(n_max + 1)
    if pulse == "ideal":
        return (n >= 1).astype(float)
    return np.where(n >= 1, np.sin(0.5 * pi * np.sqrt(n)) ** 2, 0.0)


def cycle_matrix(p: CoolingParams) -> np.ndarray:
    """T[n', n] for one pulse + recycle cycle on the truncated ladder."""
    N = p.n_max + 1
    s = sideband_success(p.n_max, p.pulse)
    c = p.p_carrier * (1 - s)
    R = recoil_branching(p.eta, p.n_max, p.branching)
    T = np.diag(1 - s - c)
    T[:, 1:] += R[:, :-1] * s[None, 1:]
    T += R * c[None, :]
    # the red sideband from n_max lands on n_max - 1; kicks above n_max leave the ladder
    assert T.shape == (N, N)
    return T


def thermal_distribution(nbar: float, n_max: int) -> np.ndarray:
    n = np.arange(n_max + 1)
    if nbar == 0:
        return (n == 0).astype(float)
    q = nbar / (1 + nbar)
    p = (1 - q) * q**n
    return p / p.sum()


def fock_distribution(n: int, n_max: int) -> np.ndarray:
    p = np.zeros(n_max + 1)
    p[n] = 1.0
    return p


@dataclass
class CoolingTrajectory:
    times: np.ndarray  # us
    populations: np.ndarray  # (cycles + 1, n_max + 1)
    mean_n: np.ndarray
    truncation_loss: np.ndarray  # cumulative

    def to_csv(self, stream) -> None:
        n_max = self.populations.shape[1] - 1
        stream.write("cycle,mean_n," + ",".join(f"p{k}" for k in range(n_max + 1)) + "\n")
        for i, (m, row) in enumerate(zip(self.mean_n, self.populations)):
            stream.write(f"{i},{m:.11e}," + ",".join(f"{v:.11e}" for v in row) + "\n")


def _check_tail(pop: np.ndarray, where: str) -> None:
    if pop[-1] > TRUNCATION_LIMIT:
        raise TruncationOverflow(f"population {pop[-1]:.2e} at n_max ({where}); raise n_max")


def simulate_cooling(p: CoolingParams, n0_distribution, n_cycles: int = 50) -> CoolingTrajectory:
    pop = np.asarray(n0_distribution, dtype=float)
    if pop.shape != (p.n_max + 1,):
        raise ValueError(f"initial distribution must have length n_max + 1 = {p.n_max + 1}")
    if np.any(pop < 0) or abs(pop.sum() - 1) > 1e-9:
        raise ValueError("initial distribution must be nonnegative and normalised")
    _check_tail(pop, "initial state")
    T = cycle_matrix(p)
    pops = [pop]
    loss = [0.0]
    n = np.arange(p.n_max + 1)
    for k in range(n_cycles):
        new = T @ pops[-1]
        loss.append(loss[-1] + pops[-1].sum() - new.sum())
        _check_tail(new, f"cycle {k + 1}")
        pops.append(new)
    P = np.array(pops)
    mean_n = P @ n
    times = np.arange(n_cycles + 1) * p.cycle_time
    return CoolingTrajectory(times, P, mean_n, np.array(loss))


@dataclass
class MonteCarloCooling:
    mean_n: np.ndarray
    stderr: np.ndarray
    samples: int


def _displacement_branching(eta: float, n_max: int, pad: int = 60) -> np.ndarray:
    """|<m'|exp(i eta (a + a^dag))|m>|^2 from a matrix exponential in a padded Fock space."""
    N = n_max + 1 + pad
    a = np.diag(np.sqrt(np.arange(1, N)), 1)
    D = scipy.linalg.expm(1j * eta * (a + a.T))
    return np.abs(D[: n_max + 1, : n_max + 1]) ** 2


def _mc_chunk(p: CoolingParams, n0: np.ndarray, n_cycles: int, samples: int, seed) -> np.ndarray:
    rng = np.random.default_rng(seed)
    N = p.n_max + 1
    if p.branching == "franck-condon":
        R = _displacement_branching(p.eta, p.n_max)
    else:
        R = recoil_branching(p.eta, p.n_max, "lamb-dicke")
    # overflow index N marks atoms kicked off the ladder
    cdf = np.cumsum(np.vstack([R, 1 - R.sum(axis=0, keepdims=True)]), axis=0).T
    s = sideband_success(p.n_max, p.pulse)
    pc = p.p_carrier
    n = rng.choice(N, size=samples, p=n0 / n0.sum())
    sums = np.zeros(n_cycles + 1)
    sq = np.zeros(n_cycles + 1)
    sums[0], sq[0] = n.sum(), (n.astype(float) ** 2).sum()
    for k in range(1, n_cycles + 1):
        alive = n < N
        u = rng.random(samples)
        nn = np.minimum(n, N - 1)
        side = alive & (u < s[nn])
        carrier = alive & ~side & (u < s[nn] + pc * (1 - s[nn]))
        excited = side | carrier
        before = np.where(side, n - 1, n)
        after = before.copy()
        v = rng.random(samples)
        for level in np.unique(before[excited]):
            sel = excited & (before == level)
            after[sel] = np.searchsorted(cdf[level], v[sel], side="right")
        n = np.minimum(after, N)
        sums[k] = n.sum()
        sq[k] = (n.astype(float) ** 2).sum()
    return np.stack([sums, sq])


def monte_carlo_cooling(p: CoolingParams, n0_distribution, n_cycles: int = 50, samples: int = 1_000_000,
                        seed: int = 0, chunks: int = 8, workers: int | None = None) -> MonteCarloCooling:
    """Sample individual atoms through the same cycle; an independent check of simulate_cooling.

    Samples are split into ``chunks`` streams spawned from one SeedSequence,
    so results depend only on (seed, chunks), never on ``workers``.
    """
    n0 = np.asarray(n0_distribution, dtype=float)
    seqs = np.random.SeedSequence(seed).spawn(chunks)
    sizes = [samples // chunks + (1 if i < samples % chunks else 0) for i in range(chunks)]
    jobs = [(p, n0, n_cycles, size, sq) for size, sq in zip(sizes, seqs)]
    if workers and workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            parts = list(pool.map(lambda j: _mc_chunk(*j), jobs))
    else:
        parts = [_mc_chunk(*j) for j in jobs]
    tot = np.sum(parts, axis=0)
    mean = tot[0] / samples
    var = tot[1] / samples - mean**2
    return MonteCarloCooling(mean, np.sqrt(np.maximum(var, 0) / samples), samples)


def floor_estimate(p: CoolingParams) -> float:
    """Leading-order residual <n>: carrier excitation of n=0 followed by a recoil kick."""
    e2 = p.eta**2
    return p.p_carrier * e2 / (1 - e2)


def with_eta(p: CoolingParams, eta: float) -> CoolingParams:
    return replace(p, eta_recoil=eta)
