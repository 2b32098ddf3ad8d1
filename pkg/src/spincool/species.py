"""Atomic species registry.

All energies are E/h in MHz, fields in tesla, times in microseconds.

Built-in constants and where they come from (also available per key as
``SpeciesParams.provenance``):

==========================  =========================================================
``1P1`` A, Q                Boyd et al. (2007), Berends et al. (1992), Sauter (1974)
``mu_B/h``, ``mu_N/h``      CODATA
``1P1`` g_J = 1             pure singlet L = 1, S = 0
``g_I`` (171Yb) = 0.9838    nuclear moment +0.4919 mu_N divided by I = 1/2
``g_I`` (87Sr) = -0.2430    nuclear moment -1.0936 mu_N divided by I = 9/2
``1P1`` linewidth           29.1 MHz (Yb), 30.2 MHz (Sr), literature lifetimes
``3P0`` g_I (87Sr)          ground g_I shifted so the clock line moves by
                            -108.4 Hz/G per m_I (Boyd et al. 2007)
==========================  =========================================================

The 171Yb ground splitting g_I mu_N B is 7.50 MHz at 1 T with the default
g_I; with g_I = 1 exactly it would be 7.62 MHz.  Neither value is forced by
anything other than the literature nuclear moment.

Config files
------------
Flat UTF-8 ``key = value`` text, one species per file.  ``#`` starts a
comment; an inline comment after a value is kept as that key's provenance
note.  Recognised keys::

    name = yb171
    I = 1/2
    mass_amu = 170.936
    clock_wavelength_nm = 578.42
    quench_wavelength_nm = 398.91
    constants.mu_B_MHz_per_T = 13996.245
    constants.mu_N_MHz_per_T = 7.622593
    levels.<term>.J = 1
    levels.<term>.A_MHz = -216
    levels.<term>.Q_MHz = 0
    levels.<term>.g_J = 1.0
    levels.<term>.g_I = 0.9838
    levels.<term>.gamma_MHz = 29.1
    levels.<term>.clock_linewidth_MHz = 7e-9

A file whose ``name`` matches a registered species overrides only the keys it
sets.  A new name defines a new species and must set ``I``, ``mass_amu``
and both wavelengths, plus ``J`` for every level it declares.  The directory
named by the ``SPINCOOL_SPECIES_PATH`` environment variable is scanned for
``*.conf`` files when the default registry is built.
"""

from __future__ import annotations

import dataclasses
import os
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path
from types import MappingProxyType
from typing import Iterable, Mapping

from .errors import ConfigError, InvalidOverride, InvalidSpins, UnknownSpecies

ENV_PATH = "SPINCOOL_SPECIES_PATH"


def as_half_integer(value) -> Fraction:
    """Parse ``value`` ("9/2", 4.5, Fraction, int) into an exact half-integer."""
    if isinstance(value, str):
        value = value.strip()
        if value.startswith("+"):
            value = value[1:]
    try:
        frac = Fraction(value).limit_denominator(2)
    except (ValueError, ZeroDivisionError) as exc:
        raise InvalidSpins(f"not a half-integer: {value!r}") from exc
    if frac.denominator not in (1, 2) or abs(float(frac) - float(Fraction(value))) > 1e-12:
        raise InvalidSpins(f"not a half-integer: {value!r}")
    return frac


def format_half(m: Fraction) -> str:
    m = Fraction(m)
    return str(m.numerator) if m.denominator == 1 else f"{m.numerator}/{m.denominator}"


@dataclass(frozen=True, order=True)
class SpinQuantum:
    """Angular momentum quantum number stored as twice its value."""

    twice_value: int

    def __post_init__(self):
        if not isinstance(self.twice_value, int) or self.twice_value < 0:
            raise InvalidSpins(f"twice_value must be a non-negative int, got {self.twice_value!r}")

    @classmethod
    def of(cls, value) -> "SpinQuantum":
        if isinstance(value, SpinQuantum):
            return value
        return cls(int(2 * as_half_integer(value)))

    @property
    def value(self) -> Fraction:
        return Fraction(self.twice_value, 2)

    @property
    def dim(self) -> int:
        return self.twice_value + 1

    def projections(self) -> tuple[Fraction, ...]:
        """Allowed m values, descending from +j to -j."""
        return tuple(Fraction(self.twice_value - 2 * k, 2) for k in range(self.dim))

    def allows(self, m) -> bool:
        m2 = 2 * Fraction(m)
        return m2.denominator == 1 and abs(m2) <= self.twice_value and (int(m2) - self.twice_value) % 2 == 0

    def __float__(self) -> float:
        return self.twice_value / 2

    def __str__(self) -> str:
        return format_half(self.value)


@dataclass(frozen=True)
class PhysicalConstants:
    mu_B_over_h: float = 13996.245  # MHz/T
    mu_N_over_h: float = 7.622593  # MHz/T


@dataclass(frozen=True)
class LevelParams:
    term: str
    J: SpinQuantum
    A: float = 0.0
    Q: float = 0.0
    g_J: float = 0.0
    g_I: float = 0.0
    gamma: float = 0.0
    clock_linewidth: float | None = None


@dataclass(frozen=True)
class SpeciesParams:
    name: str
    I: SpinQuantum
    levels: Mapping[str, LevelParams]
    mass_amu: float
    clock_wavelength_nm: float
    quench_wavelength_nm: float
    constants: PhysicalConstants = PhysicalConstants()
    provenance: Mapping[str, str] = field(default_factory=dict, compare=False)

    def level(self, term: str) -> LevelParams:
        try:
            return self.levels[term]
        except KeyError:
            raise UnknownSpecies(f"{self.name} has no level {term!r}; known: {sorted(self.levels)}") from None


def validate(sp: SpeciesParams) -> None:
    """Raise InvalidOverride if any constant breaks a type invariant."""
    if sp.mass_amu is None or not sp.mass_amu > 0:
        raise InvalidOverride(f"{sp.name}: mass_amu must be positive")
    for key in ("clock_wavelength_nm", "quench_wavelength_nm"):
        if not getattr(sp, key) > 0:
            raise InvalidOverride(f"{sp.name}: {key} must be positive")
    c = sp.constants
    if not (c.mu_B_over_h > 0 and c.mu_N_over_h > 0):
        raise InvalidOverride(f"{sp.name}: magnetons must be positive")
    for term, lv in sp.levels.items():
        if lv.term != term:
            raise InvalidOverride(f"{sp.name}: level key {term!r} holds term {lv.term!r}")
        if lv.gamma < 0:
            raise InvalidOverride(f"{sp.name} {term}: gamma must be >= 0")
        if lv.clock_linewidth is not None and lv.clock_linewidth < 0:
            raise InvalidOverride(f"{sp.name} {term}: clock_linewidth must be >= 0")
        if lv.Q != 0 and (sp.I.twice_value <= 1 or lv.J.twice_value <= 1):
            raise InvalidOverride(f"{sp.name} {term}: Q must be 0 when I <= 1/2 or J <= 1/2")


_BUILTIN_CONFIGS = {
    "yb171": """
name = yb171
I = 1/2  # 171Yb nuclear spin
mass_amu = 170.936323  # AME atomic mass
clock_wavelength_nm = 578.42  # 1S0-3P0 clock line
quench_wavelength_nm = 398.91  # 1S0-1P1 line, recycle photon
constants.mu_B_MHz_per_T = 13996.245  # CODATA
constants.mu_N_MHz_per_T = 7.622593  # CODATA
levels.1S0.J = 0
levels.1S0.g_I = 0.9838  # literature moment +0.4919 mu_N over I
levels.3P0.J = 0
levels.3P0.g_I = 0.9838  # differential g-factor not configured for Yb
levels.3P0.gamma_MHz = 7e-09  # approx, lifetime ~ 20 s
levels.3P0.clock_linewidth_MHz = 7e-09  # approx, lifetime ~ 20 s
levels.1P1.J = 1
levels.1P1.A_MHz = -216  # Boyd et al. / Berends et al.
levels.1P1.Q_MHz = 0  # I = 1/2 has no quadrupole moment
levels.1P1.g_J = 1.0  # pure singlet L = 1
levels.1P1.g_I = 0.9838  # literature moment +0.4919 mu_N over I
levels.1P1.gamma_MHz = 29.1  # literature 1P1 lifetime
""",
    "sr87": """
name = sr87
I = 9/2  # 87Sr nuclear spin
mass_amu = 86.908877  # AME atomic mass
clock_wavelength_nm = 698.45  # 1S0-3P0 clock line
quench_wavelength_nm = 460.86  # 1S0-1P1 line, recycle photon
constants.mu_B_MHz_per_T = 13996.245  # CODATA
constants.mu_N_MHz_per_T = 7.622593  # CODATA
levels.1S0.J = 0
levels.1S0.g_I = -0.243  # literature moment -1.0936 mu_N over I
levels.3P0.J = 0
levels.3P0.g_I = -0.100791  # clock shift -108.4 Hz/G per m_I, Boyd et al. 2007
levels.3P0.gamma_MHz = 1e-09  # approx, lifetime ~ 150 s
levels.3P0.clock_linewidth_MHz = 1e-09  # approx, lifetime ~ 150 s
levels.1P1.J = 1
levels.1P1.A_MHz = -3.4  # Boyd et al. / Berends et al.
levels.1P1.Q_MHz = 39  # Sauter 1974
levels.1P1.g_J = 1.0  # pure singlet L = 1
levels.1P1.g_I = -0.243  # literature moment -1.0936 mu_N over I
levels.1P1.gamma_MHz = 30.2  # literature 1P1 lifetime
""",
}

_LEVEL_KEYS = {
    "J": ("J", SpinQuantum.of),
    "A_MHz": ("A", float),
    "Q_MHz": ("Q", float),
    "g_J": ("g_J", float),
    "g_I": ("g_I", float),
    "gamma_MHz": ("gamma", float),
    "clock_linewidth_MHz": ("clock_linewidth", float),
}
_TOP_KEYS = {
    "mass_amu": float,
    "clock_wavelength_nm": float,
    "quench_wavelength_nm": float,
}
_CONST_KEYS = {"mu_B_MHz_per_T": "mu_B_over_h", "mu_N_MHz_per_T": "mu_N_over_h"}


def _parse_lines(text: str, source: str) -> tuple[dict[str, tuple[str, int]], dict[str, str]]:
    values: dict[str, tuple[str, int]] = {}
    notes: dict[str, str] = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        note = None
        if "#" in line:
            line, note = (s.strip() for s in line.split("#", 1))
        if "=" not in line:
            raise ConfigError(f"{source}:{lineno}: expected 'key = value', got {raw.strip()!r}")
        key, value = (s.strip() for s in line.split("=", 1))
        if not key or not value:
            raise ConfigError(f"{source}:{lineno}: empty key or value")
        if key in values:
            raise ConfigError(f"{source}:{lineno}: duplicate key {key!r}")
        values[key] = (value, lineno)
        if note:
            notes[key] = note
    return values, notes


def parse_config(text: str, base: Mapping[str, SpeciesParams] | None = None,
                 source: str = "<config>") -> SpeciesParams:
    """Parse one species config; keys override ``base[name]`` when present."""
    values, notes = _parse_lines(text, source)
    if "name" not in values:
        raise ConfigError(f"{source}: missing 'name'")
    name = values.pop("name")[0]
    prior = (base or {}).get(name)

    def convert(key, conv, value, lineno):
        try:
            return conv(value)
        except (ValueError, InvalidSpins) as exc:
            raise ConfigError(f"{source}:{lineno}: bad value for {key!r}: {value!r}") from exc

    top = {}
    consts = {}
    levels: dict[str, dict] = {}
    for key, (value, lineno) in values.items():
        parts = key.split(".")
        if key == "I":
            top["I"] = convert(key, SpinQuantum.of, value, lineno)
        elif key in _TOP_KEYS:
            top[key] = convert(key, _TOP_KEYS[key], value, lineno)
        elif parts[0] == "constants" and len(parts) == 2 and parts[1] in _CONST_KEYS:
            consts[_CONST_KEYS[parts[1]]] = convert(key, float, value, lineno)
        elif parts[0] == "levels" and len(parts) == 3 and parts[2] in _LEVEL_KEYS:
            attr, conv = _LEVEL_KEYS[parts[2]]
            levels.setdefault(parts[1], {})[attr] = convert(key, conv, value, lineno)
        else:
            raise ConfigError(f"{source}:{lineno}: unknown key {key!r}")

    provenance = dict(prior.provenance) if prior else {}
    provenance.update(notes)
    if prior is None:
        for req in ("I", *_TOP_KEYS):
            if req not in top:
                raise ConfigError(f"{source}: new species {name!r} must set {req!r}")
        merged_levels = {}
        constants = PhysicalConstants(**consts)
    else:
        merged_levels = dict(prior.levels)
        constants = dataclasses.replace(prior.constants, **consts)
    for term, attrs in levels.items():
        if term in merged_levels:
            merged_levels[term] = dataclasses.replace(merged_levels[term], **attrs)
        else:
            if "J" not in attrs:
                raise ConfigError(f"{source}: level {term!r} must set J")
            merged_levels[term] = LevelParams(term=term, **attrs)
    if prior is None:
        sp = SpeciesParams(name=name, levels=MappingProxyType(merged_levels), constants=constants,
                           provenance=MappingProxyType(provenance), **top)
    else:
        sp = dataclasses.replace(prior, levels=MappingProxyType(merged_levels), constants=constants,
                                 provenance=MappingProxyType(provenance), **top)
    validate(sp)
    return sp


def _num(x: float) -> str:
    return repr(float(x))


def to_config(sp: SpeciesParams) -> str:
    """Serialize to the config grammar; ``parse_config`` reproduces ``sp``."""
    lines = []

    def put(key, value):
        note = sp.provenance.get(key)
        lines.append(f"{key} = {value}" + (f"  # {note}" if note else ""))

    put("name", sp.name)
    put("I", str(sp.I))
    for key in _TOP_KEYS:
        put(key, _num(getattr(sp, key)))
    for key, attr in _CONST_KEYS.items():
        put(f"constants.{key}", _num(getattr(sp.constants, attr)))
    for term, lv in sp.levels.items():
        for key, (attr, _) in _LEVEL_KEYS.items():
            value = getattr(lv, attr)
            if value is None:
                continue
            put(f"levels.{term}.{key}", str(value) if attr == "J" else _num(value))
    return "\n".join(lines) + "\n"


class SpeciesRegistry:
    """Immutable name -> SpeciesParams mapping; ``with_config`` returns a new one."""

    def __init__(self, species: Iterable[SpeciesParams]):
        table = {}
        for sp in species:
            validate(sp)
            table[sp.name] = sp
        self._table = MappingProxyType(table)

    @classmethod
    def builtin(cls) -> "SpeciesRegistry":
        table: dict[str, SpeciesParams] = {}
        for name, text in _BUILTIN_CONFIGS.items():
            table[name] = parse_config(text, source=f"<builtin {name}>")
        return cls(table.values())

    def with_config(self, path: str | os.PathLike) -> "SpeciesRegistry":
        path = Path(path)
        text = path.read_text(encoding="utf-8")
        sp = parse_config(text, self._table, source=str(path))
        table = dict(self._table)
        table[sp.name] = sp
        return SpeciesRegistry(table.values())

    def with_directory(self, directory: str | os.PathLike) -> "SpeciesRegistry":
        reg = self
        for path in sorted(Path(directory).glob("*.conf")):
            reg = reg.with_config(path)
        return reg

    def get(self, name: str) -> SpeciesParams:
        try:
            return self._table[name]
        except KeyError:
            raise UnknownSpecies(f"unknown species {name!r}; known: {list(self._table)}") from None

    def names(self) -> list[str]:
        return list(self._table)

    def __contains__(self, name) -> bool:
        return name in self._table


_defaults: dict[str | None, SpeciesRegistry] = {}


def default_registry() -> SpeciesRegistry:
    """Built-in species plus any ``*.conf`` in $SPINCOOL_SPECIES_PATH."""
    env = os.environ.get(ENV_PATH) or None
    if env not in _defaults:
        reg = SpeciesRegistry.builtin()
        if env:
            reg = reg.with_directory(env)
        _defaults[env] = reg
    return _defaults[env]


def get_species(name: str, registry: SpeciesRegistry | None = None) -> SpeciesParams:
    return (registry or default_registry()).get(name)


def list_species(registry: SpeciesRegistry | None = None) -> list[str]:
    return (registry or default_registry()).names()


def resolve(species: str | SpeciesParams, registry: SpeciesRegistry | None = None) -> SpeciesParams:
    """Accept either a name or an already-resolved SpeciesParams."""
    if isinstance(species, SpeciesParams):
        return species
    return get_species(species, registry)
