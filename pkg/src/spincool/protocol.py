"""Experiment planning: threshold fields, readout resolvability, shelving.

Every number here is derived from :mod:`structure` and :mod:`decay`; the only
imported input is the 3P0 nuclear g-factor of the registry, which sets the
differential clock splitting used by :func:`shelving_plan` and
:func:`differential_phase`.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from fractions import Fraction

import numpy as np

from .decay import EXCITED_TERM, GROUND_TERM, QubitEncoding, transfer_fidelity
from .errors import NotSelective, Unreachable
from .species import SpeciesParams, SpeciesRegistry, format_half, resolve
from .structure import eigensystem

CLOCK_TERM = "3P0"
DEFAULT_THRESHOLD = 3.0
DEFAULT_PULSE_BANDWIDTH = 1e-4  # MHz, a ~100 Hz clock pulse
FIELD_TOL = 1e-4


def default_b_hi(species: str | SpeciesParams, registry: SpeciesRegistry | None = None) -> float:
    """A field deep in the Paschen-Back region of 1P1 (tesla)."""
    sp = resolve(species, registry)
    lvl = sp.level(EXCITED_TERM)
    scale = max(abs(lvl.A) * (float(sp.I) + 0.5), abs(lvl.Q), 1.0)
    return 1000 * scale / (abs(lvl.g_J or 1.0) * sp.constants.mu_B_over_h)


@dataclass(frozen=True)
class MinField:
    B: float
    fidelity: float
    target: float
    encoding: QubitEncoding
    non_monotone: bool
    B_hi: float

    def __float__(self) -> float:
        return self.B


def find_min_field(species: str | SpeciesParams, encoding: QubitEncoding, target_F: float,
                   B_hi: float | None = None, n_scan: int = 80,
                   registry: SpeciesRegistry | None = None) -> MinField:
    """Smallest field of the asymptotic region with F >= target_F.

    A geometric scan from B_hi down over four decades brackets the largest
    crossing of target_F; bisection then narrows it until the fidelity is
    within 1e-4 of the target and the bracket is below 1e-4 relative.  If the
    scan sees F rise again at lower field, ``non_monotone`` is set.
    """
    if not 0 < target_F < 1:
        raise ValueError("target fidelity must lie in (0, 1)")
    sp = resolve(species, registry)
    B_hi = default_b_hi(sp) if B_hi is None else float(B_hi)

    def F(B):
        return transfer_fidelity(sp, encoding, B).fidelity

    f_hi = F(B_hi)
    if f_hi < target_F:
        raise Unreachable(f"F({B_hi:.4g} T) = {f_hi:.6f} < {target_F}")
    grid = np.geomspace(B_hi, B_hi * 1e-4, n_scan)
    fs = np.array([f_hi] + [F(B) for B in grid[1:]])
    below = np.nonzero(fs < target_F)[0]
    if below.size == 0:
        return MinField(float(grid[-1]), float(fs[-1]), target_F, encoding, False, B_hi)
    k = int(below[0])
    non_monotone = bool(np.any(fs[k:] >= target_F) or np.any(np.diff(fs[:k + 1]) > 1e-12))
    lo, hi = float(grid[k]), float(grid[k - 1])
    f_top = float(fs[k - 1])
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        f_mid = F(mid)
        if f_mid >= target_F:
            hi, f_top = mid, f_mid
        else:
            lo = mid
        if (hi - lo) <= FIELD_TOL * hi and f_top - target_F <= FIELD_TOL:
            break
    return MinField(hi, f_top, target_F, encoding, non_monotone, B_hi)


def best_pair_min_field(species: str | SpeciesParams, target_F: float, B_hi: float | None = None,
                        registry: SpeciesRegistry | None = None) -> MinField:
    """Lowest threshold field over the +-m_I pair encodings."""
    sp = resolve(species, registry)
    results = []
    for m in sp.I.projections():
        if m > 0:
            try:
                results.append(find_min_field(sp, QubitEncoding.pair(m), target_F, B_hi))
            except Unreachable:
                pass
    if not results:
        raise Unreachable(f"no +-m_I pair of {sp.name} reaches F = {target_F}")
    return min(results, key=lambda r: r.B)


@dataclass(frozen=True)
class ReadoutEntry:
    transition: str
    splitting: float  # MHz, from diagonalisation
    linewidth: float  # MHz
    resolvable: bool
    analytic: float | None = None  # MHz, first-order formula where one exists


@dataclass
class ResolvabilityReport:
    species: str
    B: float
    threshold: float
    entries: list[ReadoutEntry] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {"species": self.species, "B_T": self.B, "threshold": self.threshold,
                "entries": [asdict(e) for e in self.entries]}

    def to_json(self, stream) -> None:
        json.dump(self.to_dict(), stream, indent=2)
        stream.write("\n")

    def to_text(self) -> str:
        head = ("transition", "splitting_MHz", "analytic_MHz", "linewidth_MHz", "resolvable")
        rows = [(e.transition, f"{e.splitting:.6f}", "-" if e.analytic is None else f"{e.analytic:.6f}",
                 f"{e.linewidth:.4f}", "yes" if e.resolvable else "no") for e in self.entries]
        widths = [max(len(r[i]) for r in [head, *rows]) for i in range(len(head))]
        lines = [f"# {self.species}  B = {self.B:g} T  threshold = {self.threshold:g}"]
        for r in [head, *rows]:
            lines.append("  ".join(c.ljust(w) for c, w in zip(r, widths)).rstrip())
        return "\n".join(lines) + "\n"

    def entry(self, transition: str) -> ReadoutEntry:
        for e in self.entries:
            if e.transition == transition:
                return e
        raise KeyError(transition)


def _pair_name(m_J, a, b) -> str:
    return f"1P1 m_J={m_J:+d}: m_I={format_half(a)}<->{format_half(b)}"


def readout_report(species: str | SpeciesParams, B: float, threshold: float = DEFAULT_THRESHOLD,
                   registry: SpeciesRegistry | None = None) -> ResolvabilityReport:
    """Splittings relevant for state-selective readout on 1S0 -> 1P1.

    For I = 1/2 the m_J = +-1 intra-pair splittings are compared with the
    first-order value |A m_J - g_I mu_N B|, and the ground qubit splitting
    and the net selectivity of the m_J = -1 readout line are listed.  For
    larger I every pair of neighbouring m_I within m_J = +-1 is reported.
    """
    sp = resolve(species, registry)
    lvl = sp.level(EXCITED_TERM)
    ex = eigensystem(sp, EXCITED_TERM, B)
    gr = eigensystem(sp, GROUND_TERM, B)
    Gamma = lvl.gamma
    rep = ResolvabilityReport(sp.name, float(B), threshold)

    def add(name, split, analytic=None):
        split = abs(split)
        rep.entries.append(ReadoutEntry(name, float(split), Gamma, bool(split / Gamma > threshold),
                                        None if analytic is None else float(abs(analytic))))

    ms = sp.I.projections()
    if sp.I.twice_value == 1:
        up, dn = ms
        zn = lvl.g_I * sp.constants.mu_N_over_h * B
        for m_J in (-1, 1):
            add(_pair_name(m_J, up, dn), ex.energy((up, m_J)) - ex.energy((dn, m_J)), lvl.A * m_J - zn)
        dg = gr.energy((up, 0)) - gr.energy((dn, 0))
        add("1S0 qubit: m_I=+1/2<->-1/2", dg, sp.level(GROUND_TERM).g_I * sp.constants.mu_N_over_h * B)
        de = ex.energy((up, -1)) - ex.energy((dn, -1))
        add("1S0->1P1 m_J=-1 selectivity", de - dg)
    else:
        for m_J in (1, -1):
            for a, b in zip(ms[:-1], ms[1:]):
                add(_pair_name(m_J, a, b), ex.energy((a, m_J)) - ex.energy((b, m_J)))
    return rep


@dataclass
class PairDegeneracyReport:
    species: str
    B_grid: np.ndarray
    pairs: tuple[Fraction, ...]
    intra: np.ndarray  # (n_pairs, n_B) |E(m,0) - E(-m,0)|
    adjacent_gaps: np.ndarray  # (n_pairs - 1,) min over B of the closest approach of neighbouring pairs

    @property
    def intra_max(self) -> np.ndarray:
        return self.intra.max(axis=1)

    @property
    def inter_min_gap(self) -> float:
        return float(self.adjacent_gaps.min()) if self.adjacent_gaps.size else float("inf")

    def to_dict(self) -> dict:
        return {
            "species": self.species,
            "B_min_T": float(self.B_grid[0]), "B_max_T": float(self.B_grid[-1]), "points": len(self.B_grid),
            "pairs": [{"m_I": format_half(m), "max_intra_MHz": float(s)} for m, s in zip(self.pairs, self.intra_max)],
            "adjacent_gaps_MHz": [float(g) for g in self.adjacent_gaps],
            "inter_min_gap_MHz": self.inter_min_gap,
        }

    def to_json(self, stream) -> None:
        json.dump(self.to_dict(), stream, indent=2)
        stream.write("\n")

    def to_text(self) -> str:
        lines = [f"# {self.species}  m_J=0 branch  B = {self.B_grid[0]:g}..{self.B_grid[-1]:g} T"]
        lines.append("pair_|m_I|  max_intra_MHz  gap_to_next_MHz")
        for k, (m, s) in enumerate(zip(self.pairs, self.intra_max)):
            gap = f"{self.adjacent_gaps[k]:.6f}" if k < len(self.adjacent_gaps) else "-"
            lines.append(f"{format_half(m):<10}  {s:<13.6f}  {gap}")
        return "\n".join(lines) + "\n"


def pair_degeneracy_audit(species: str | SpeciesParams = "sr87", B_min: float = 0.05, B_max: float = 0.12,
                          n_points: int = 71, registry: SpeciesRegistry | None = None) -> PairDegeneracyReport:
    """Intra-pair splittings and inter-pair gaps of the 1P1 m_J = 0 branch."""
    sp = resolve(species, registry)
    pairs = tuple(m for m in sp.I.projections() if m > 0)[::-1]
    grid = np.linspace(B_min, B_max, n_points)
    E = np.empty((len(pairs), 2, n_points))
    for j, B in enumerate(grid):
        es = eigensystem(sp, EXCITED_TERM, float(B))
        for k, m in enumerate(pairs):
            E[k, 0, j] = es.energy((m, 0))
            E[k, 1, j] = es.energy((-m, 0))
    intra = np.abs(E[:, 0] - E[:, 1])
    gaps = np.array([np.abs(E[k][:, None, :] - E[k + 1][None, :, :]).min() for k in range(len(pairs) - 1)])
    return PairDegeneracyReport(sp.name, grid, pairs, intra, gaps)


def clock_offsets(species: str | SpeciesParams, B: float,
                  registry: SpeciesRegistry | None = None) -> dict[Fraction, float]:
    """Shift (MHz) of each 1S0(m_I) -> 3P0(m_I) clock line from its zero-field value."""
    sp = resolve(species, registry)
    g0, g1 = eigensystem(sp, GROUND_TERM, 0.0), eigensystem(sp, GROUND_TERM, B)
    c0, c1 = eigensystem(sp, CLOCK_TERM, 0.0), eigensystem(sp, CLOCK_TERM, B)
    return {m: (c1.energy((m, 0)) - g1.energy((m, 0))) - (c0.energy((m, 0)) - g0.energy((m, 0)))
            for m in sp.I.projections()}


@dataclass(frozen=True)
class PulseStep:
    name: str
    transition: str
    offset_MHz: float
    selective: bool


@dataclass
class ShelvingPlan:
    species: str
    B: float
    target: Fraction
    bandwidth: float
    steps: list[PulseStep]

    def to_list(self) -> list[dict]:
        return [asdict(s) for s in self.steps]

    def to_json(self, stream) -> None:
        json.dump(self.to_list(), stream, indent=2)
        stream.write("\n")

    def to_text(self) -> str:
        lines = [f"# {self.species}  B = {self.B:g} T  target m_I = {format_half(self.target)}"]
        for k, s in enumerate(self.steps, 1):
            lines.append(f"{k}  {s.name:<12}  {s.transition:<22}  {s.offset_MHz:+.9f} MHz"
                         + ("  selective" if s.selective else ""))
        return "\n".join(lines) + "\n"


def shelving_plan(species: str | SpeciesParams = "sr87", B: float = 5e-3, target_mI=Fraction(9, 2),
                  bandwidth: float = DEFAULT_PULSE_BANDWIDTH,
                  registry: SpeciesRegistry | None = None) -> ShelvingPlan:
    """Shelve everything in 3P0, return one m_I with a narrow pulse, fluoresce.

    Raises NotSelective if another m_I return line lies within ``bandwidth``
    (MHz) of the target's.
    """
    sp = resolve(species, registry)
    target = Fraction(target_mI)
    if not sp.I.allows(target):
        raise ValueError(f"m_I={format_half(target)} not allowed for I={sp.I}")
    offs = clock_offsets(sp, B)
    t = offs[target]
    clash = [m for m, o in offs.items() if m != target and abs(o - t) < bandwidth]
    if clash:
        raise NotSelective(f"return line of m_I={format_half(target)} within {bandwidth:g} MHz of "
                           + ", ".join(format_half(m) for m in clash))
    steps = [
        PulseStep("shelve", "1S0->3P0 all m_I", 0.0, False),
        PulseStep("return", f"3P0->1S0 m_I={format_half(target)}", float(t), True),
        PulseStep("fluoresce", "1S0->1P1", 0.0, False),
    ]
    return ShelvingPlan(sp.name, float(B), target, bandwidth, steps)


@dataclass(frozen=True)
class PhaseSet:
    m_I: tuple[Fraction, ...]
    phases: np.ndarray  # rad, wrapped to [0, 2 pi)
    correction: np.ndarray  # rad, undoes ``phases``


def differential_phase(species: str | SpeciesParams, B: float, t: float,
                       registry: SpeciesRegistry | None = None) -> PhaseSet:
    """Phase 2 pi dnu(m_I) t accumulated in 3P0 relative to 1S0, t in microseconds."""
    offs = clock_offsets(species, B, registry)
    ms = tuple(offs)
    ph = np.mod(2 * np.pi * np.array([offs[m] for m in ms]) * t, 2 * np.pi)
    return PhaseSet(ms, ph, np.mod(-ph, 2 * np.pi))
