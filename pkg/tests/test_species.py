from fractions import Fraction

import pytest
from hypothesis import given, strategies as st

from spincool.errors import ConfigError, InvalidOverride, InvalidSpins, UnknownSpecies
from spincool.species import (SpeciesRegistry, SpinQuantum, as_half_integer, get_species, list_species,
                              parse_config, to_config)

CA43 = """
name = ca43
I = 7/2  # test isotope
mass_amu = 42.958766
clock_wavelength_nm = 729.1
quench_wavelength_nm = 396.8
levels.1S0.J = 0
levels.1P1.J = 1
levels.1P1.A_MHz = -100
levels.1P1.Q_MHz = 5
levels.1P1.g_J = 1.0
levels.1P1.gamma_MHz = 20
"""


def test_builtin_yb():
    yb = get_species("yb171")
    assert yb.I == SpinQuantum(1)
    assert yb.level("1P1").A == -216


def test_builtin_sr():
    sr = get_species("sr87")
    assert sr.I.value == Fraction(9, 2)
    assert sr.level("1P1").A == -3.4
    assert sr.level("1P1").Q == 39


def test_unknown_species():
    with pytest.raises(UnknownSpecies):
        get_species("xx999")


def test_list_is_deterministic():
    assert list_species()[:2] == ["yb171", "sr87"]
    assert list_species() == list_species()


def test_magneton_ratio():
    c = get_species("yb171").constants
    assert c.mu_B_over_h / c.mu_N_over_h == pytest.approx(1836.15267, rel=1e-4)


def test_config_adds_species(tmp_path):
    p = tmp_path / "ca43.conf"
    p.write_text(CA43)
    reg = SpeciesRegistry.builtin().with_config(p)
    assert "ca43" in reg.names()
    assert reg.get("ca43").provenance["I"] == "test isotope"
    assert "ca43" not in SpeciesRegistry.builtin()


def test_directory_scan(tmp_path):
    (tmp_path / "a.conf").write_text(CA43)
    (tmp_path / "b.txt").write_text("garbage")
    assert "ca43" in SpeciesRegistry.builtin().with_directory(tmp_path)


def test_override_changes_only_given_keys():
    reg = SpeciesRegistry.builtin()
    sp = parse_config("name = yb171\nlevels.1P1.gamma_MHz = 25\n", {n: reg.get(n) for n in reg.names()})
    assert sp.level("1P1").gamma == 25
    assert sp.level("1P1").A == -216


@pytest.mark.parametrize("text,err", [
    ("name = yb171\nlevels.1P1.gamma_MHz = -1\n", InvalidOverride),
    ("name = yb171\nlevels.1P1.Q_MHz = 3\n", InvalidOverride),
    ("name = yb171\nbogus = 1\n", ConfigError),
    ("name = yb171\nI = 1/3\n", ConfigError),
    ("name = new\nI = 1/2\n", ConfigError),
    ("name = yb171\njust text\n", ConfigError),
])
def test_bad_configs(text, err):
    reg = SpeciesRegistry.builtin()
    with pytest.raises(err):
        parse_config(text, {n: reg.get(n) for n in reg.names()})


def test_config_error_has_line_number():
    with pytest.raises(ConfigError, match=":3:"):
        parse_config("name = yb171\n# comment\nbogus = 1\n", {"yb171": get_species("yb171")})


@pytest.mark.parametrize("name", ["yb171", "sr87"])
def test_round_trip_builtin(name):
    sp = get_species(name)
    back = parse_config(to_config(sp))
    assert back == sp
    assert dict(back.provenance) == dict(sp.provenance)


@given(A=st.floats(-1e4, 1e4, allow_nan=False), gamma=st.floats(0, 1e3), gI=st.floats(-5, 5),
       mass=st.floats(1, 300))
def test_round_trip_property(A, gamma, gI, mass):
    base = {"sr87": get_species("sr87")}
    text = (f"name = sr87\nmass_amu = {mass!r}\nlevels.1P1.A_MHz = {A!r}\n"
            f"levels.1P1.gamma_MHz = {gamma!r}\nlevels.1S0.g_I = {gI!r}\n")
    sp = parse_config(text, base)
    assert parse_config(to_config(sp)) == sp


@given(st.integers(0, 40))
def test_spin_projections(twice):
    j = SpinQuantum(twice)
    ms = j.projections()
    assert len(ms) == twice + 1
    assert all(j.allows(m) for m in ms)
    assert not j.allows(j.value + 1)
    assert sum(ms) == 0


def test_half_integer_parsing():
    assert as_half_integer("+9/2") == Fraction(9, 2)
    assert as_half_integer(1.5) == Fraction(3, 2)
    with pytest.raises(InvalidSpins):
        as_half_integer("1/3")
    with pytest.raises(InvalidSpins):
        SpinQuantum(-1)
