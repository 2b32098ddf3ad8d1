import json
import subprocess
import sys

import pytest

from spincool.cli import main


def run(capsys, *argv):
    code = main(list(argv))
    out, err = capsys.readouterr()
    return code, out, err


def test_zeeman_file_and_manifest(tmp_path, capsys):
    out = tmp_path / "z.csv"
    code, _, _ = run(capsys, "zeeman", "--species", "yb171", "--level", "1P1", "--bmin", "0", "--bmax", "2",
                     "--points", "500", "--out", str(out))
    assert code == 0
    lines = out.read_text().splitlines()
    assert lines[0] == "B_T,label_mI,label_mJ,energy_MHz"
    assert len(lines) == 1 + 6 * 500
    man = json.loads((tmp_path / "z.csv.manifest.json").read_text())
    for key in ("command", "species_config_sha256", "constants", "seed", "tool_version", "timestamp"):
        assert key in man


def test_zeeman_points_one_is_usage_error(capsys):
    code, _, err = run(capsys, "zeeman", "--species", "yb171", "--bmax", "2", "--points", "1")
    assert code == 2 and "usage" in err


def test_missing_flag_is_usage_error(capsys):
    code, _, _ = run(capsys, "zeeman", "--species", "yb171")
    assert code == 2


def test_sr_zeeman_30_curves(capsys):
    code, out, err = run(capsys, "zeeman", "--species", "sr87", "--bmin", "0", "--bmax", "150mT", "--points", "600")
    assert code == 0
    labels = {tuple(r.split(",")[1:3]) for r in out.splitlines()[1:]}
    assert len(labels) == 30
    assert json.loads(err)["species"] == "sr87"


def test_fidelity_crosses_near_1T(capsys):
    code, out, _ = run(capsys, "fidelity", "--species", "yb171", "--qubit", "1/2", "--bmin", "0", "--bmax", "2",
                       "--points", "200")
    assert code == 0
    rows = [list(map(float, r.split(","))) for r in out.splitlines()[1:]]
    first = next(B for B, F, *_ in rows if F >= 0.99)
    assert 0.5 <= first <= 2


def test_fidelity_master_equation_crosscheck(capsys):
    code, out, err = run(capsys, "fidelity", "--species", "sr87", "--qubit", "pair:9/2", "--bmin", "10mT",
                         "--bmax", "50mT", "--points", "5", "--mode", "master-equation")
    assert code == 0
    assert out.splitlines()[0] == "B_T,fidelity_master,fidelity_algebraic,cross_check_delta,purity"
    assert all(abs(float(r.split(",")[3])) <= 1e-4 for r in out.splitlines()[1:])
    assert json.loads(err)["max_abs_cross_check_delta"] <= 1e-4


def test_find_field(capsys):
    code, out, _ = run(capsys, "find-field", "--species", "yb171", "--qubit", "1/2", "--target", "0.99")
    assert code == 0
    assert 0.5 <= float(out.strip()) <= 2
    assert len(out.strip().replace(".", "").lstrip("0")) <= 3


def test_find_field_unreachable_is_domain_error(capsys):
    code, _, err = run(capsys, "find-field", "--species", "yb171", "--qubit", "1/2", "--bhi", "0.1")
    assert code == 3 and err.startswith("Unreachable")


def test_unknown_species_is_domain_error(capsys):
    code, _, err = run(capsys, "species", "--show", "xx999")
    assert code == 3 and "UnknownSpecies" in err


def test_io_error(tmp_path, capsys):
    code, _, err = run(capsys, "species", "--out", str(tmp_path / "missing" / "x.txt"))
    assert code == 4


def test_species_show(capsys):
    code, out, _ = run(capsys, "species", "--show", "yb171")
    assert code == 0
    assert out.splitlines()[0].split() == ["key", "value", "provenance"]
    assert any(line.startswith("levels.1P1.A_MHz") and "-216" in line for line in out.splitlines())


def test_config_flag(tmp_path, capsys):
    conf = tmp_path / "x.conf"
    conf.write_text("name = yb171\nlevels.1P1.gamma_MHz = 10  # test\n")
    code, out, _ = run(capsys, "species", "--show", "yb171", "--config", str(conf))
    assert code == 0 and "10.0" in out and "test" in out


@pytest.mark.parametrize("kind,extra", [("readout", ["--species", "yb171", "--B", "1"]),
                                        ("pairs", ["--points", "5"]),
                                        ("shelving", ["--B", "5mT", "--format", "json"])])
def test_report_kinds(kind, extra, capsys):
    code, out, _ = run(capsys, "report", "--kind", kind, *extra)
    assert code == 0 and out


def test_shelving_not_selective(tmp_path, capsys):
    conf = tmp_path / "flat.conf"
    conf.write_text("name = sr87\nlevels.3P0.g_I = -0.243\n")
    code, _, err = run(capsys, "report", "--kind", "shelving", "--B", "5mT", "--config", str(conf))
    assert code == 3 and err.startswith("NotSelective")


def test_cool_with_oracle(tmp_path, capsys):
    out = tmp_path / "c.csv"
    code, _, _ = run(capsys, "cool", "--species", "sr87", "--omega", "260", "--gamma-clock", "0.0005",
                     "--cycles", "10", "--seed", "7", "--out", str(out), "--mc-samples", "20000")
    assert code == 0
    assert out.read_text().startswith("cycle,mean_n,p0,p1")
    mc = (tmp_path / "c.csv.montecarlo.csv").read_text().splitlines()
    assert mc[0] == "cycle,mean_n_rate,mean_n_mc,stderr_mc" and len(mc) == 12
    man = json.loads((tmp_path / "c.csv.manifest.json").read_text())
    assert man["seed"] == 7 and man["steady_state_n"] > 0


def test_plotscript(tmp_path, capsys):
    out = tmp_path / "f.csv"
    code, _, _ = run(capsys, "fidelity", "--species", "yb171", "--qubit", "1/2", "--bmax", "2", "--points", "5",
                     "--out", str(out), "--emit-plotscript")
    assert code == 0
    gp = (tmp_path / "f.csv.gp").read_text()
    assert "set datafile separator ','" in gp and str(out) in gp


def test_byte_identical_runs(tmp_path):
    env_cmd = [sys.executable, "-m", "spincool.cli"]
    args = ["cool", "--species", "sr87", "--omega", "260", "--gamma-clock", "0.0005", "--cycles", "20",
            "--seed", "7", "--mc-samples", "5000", "--threads", "3"]
    outs = []
    for k in range(2):
        path = tmp_path / f"run{k}.csv"
        subprocess.run(env_cmd + args + ["--out", str(path)], check=True,
                       env={"SOURCE_DATE_EPOCH": "0", "PATH": "/usr/bin:/bin"})
        outs.append((path.read_bytes(), (tmp_path / f"run{k}.csv.montecarlo.csv").read_bytes()))
    assert outs[0] == outs[1]
