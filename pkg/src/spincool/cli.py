"""Command-line front end.

Every data-producing subcommand writes its table to ``--out`` (``-`` for
stdout) and a JSON run manifest beside it (``<out>.manifest.json``; on
stderr when streaming).  Exit codes: 0 ok, 2 usage, 3 domain error,
4 I/O error.

Set SOURCE_DATE_EPOCH to pin the manifest timestamp.
"""

from __future__ import annotations

import argparse
import hashlib
import io
import json
import os
import re
import sys
import time
from dataclasses import fields
from fractions import Fraction


from . import __version__
from .cooling import (CoolingTrajectory, cooling_params, fock_distribution, monte_carlo_cooling, simulate_cooling,
                      steady_state_n, thermal_distribution)
from .decay import QubitEncoding, fidelity_sweep, master_equation_transfer
from .errors import SpinCoolError
from .protocol import (best_pair_min_field, find_min_field, pair_degeneracy_audit, readout_report,
                       shelving_plan)
from .species import SpeciesRegistry, as_half_integer, default_registry, format_half, to_config
from .structure import zeeman_sweep

QUBIT_HELP = ("qubit encoding: '1/2' means (m_up, m_down) = (+1/2, -1/2); 'pair:m' means (+m, -m); "
              "'a,b' gives both projections explicitly")

_UNITS = {"t": 1.0, "mt": 1e-3, "ut": 1e-6, "g": 1e-4}


def field(text: str) -> float:
    """Magnetic field in tesla; accepts a unit suffix T, mT, uT or G."""
    m = re.fullmatch(r"\s*([-+0-9.eE]+)\s*([a-zA-Z]*)\s*", text)
    if not m:
        raise argparse.ArgumentTypeError(f"bad field value {text!r}")
    unit = m.group(2).lower() or "t"
    if unit not in _UNITS:
        raise argparse.ArgumentTypeError(f"unknown field unit {m.group(2)!r}")
    try:
        value = float(m.group(1)) * _UNITS[unit]
    except ValueError:
        raise argparse.ArgumentTypeError(f"bad field value {text!r}") from None
    if value < 0:
        raise argparse.ArgumentTypeError("field must be >= 0")
    return value


def qubit(text: str) -> QubitEncoding | str:
    if text.strip() == "best":
        return "best"
    try:
        return QubitEncoding.parse(text)
    except (ValueError, ZeroDivisionError) as exc:
        raise argparse.ArgumentTypeError(str(exc)) from None


def half(text: str) -> Fraction:
    try:
        return as_half_integer(text)
    except (ValueError, ZeroDivisionError) as exc:
        raise argparse.ArgumentTypeError(str(exc)) from None


def positive_int(text: str) -> int:
    n = int(text)
    if n < 1:
        raise argparse.ArgumentTypeError("must be >= 1")
    return n


class Output:
    """Destination for one data file plus its manifest."""

    def __init__(self, path: str):
        self.path = path
        self.buffer = io.StringIO()

    @property
    def streaming(self) -> bool:
        return self.path == "-"

    def sibling(self, suffix: str) -> str:
        return self.path + suffix

    def commit(self, manifest: dict) -> None:
        text = json.dumps(manifest, indent=2, sort_keys=True) + "\n"
        if self.streaming:
            sys.stdout.write(self.buffer.getvalue())
            sys.stdout.flush()
            sys.stderr.write(text)
        else:
            with open(self.path, "w", newline="\n") as fh:
                fh.write(self.buffer.getvalue())
            with open(self.sibling(".manifest.json"), "w", newline="\n") as fh:
                fh.write(text)


def _timestamp() -> str:
    epoch = os.environ.get("SOURCE_DATE_EPOCH")
    t = int(epoch) if epoch else time.time()
    return time.strftime("%Y-%m-%dT%H:%M:%SZ", time.gmtime(t))


def _level_dict(lvl) -> dict:
    d = {f.name: getattr(lvl, f.name) for f in fields(lvl)}
    d["J"] = str(lvl.J)
    return d


def manifest(args, registry: SpeciesRegistry, argv, extra: dict | None = None) -> dict:
    species = getattr(args, "species", None)
    out = {"command": ["spincool", *argv], "tool_version": __version__, "seed": args.seed,
           "timestamp": _timestamp()}
    if species:
        sp = registry.get(species)
        cfg = to_config(sp)
        out["species"] = sp.name
        out["species_config_sha256"] = hashlib.sha256(cfg.encode()).hexdigest()
        out["constants"] = {"mu_B_MHz_per_T": sp.constants.mu_B_over_h, "mu_N_MHz_per_T": sp.constants.mu_N_over_h,
                            "I": format_half(sp.I.value), "mass_amu": sp.mass_amu,
                            "clock_wavelength_nm": sp.clock_wavelength_nm,
                            "quench_wavelength_nm": sp.quench_wavelength_nm,
                            "levels": {t: _level_dict(lvl) for t, lvl in sp.levels.items()}}
    if extra:
        out.update(extra)
    return out


def _plotscript(args, body: str) -> None:
    if args.emit_plotscript is None:
        return
    path = args.emit_plotscript or (None if args.out == "-" else args.out + ".gp")
    data = "'-'" if args.out == "-" else repr(args.out)
    text = f"set datafile separator ','\nset key outside\n{body.replace('DATA', data)}\n"
    if path is None:
        sys.stderr.write(text)
    else:
        with open(path, "w") as fh:
            fh.write(text)


def cmd_zeeman(args, registry, out: Output) -> dict:
    if args.points < 2:
        raise _Usage("--points must be >= 2")
    if args.bmax <= args.bmin:
        raise _Usage("--bmax must exceed --bmin")
    d = zeeman_sweep(args.species, args.level, args.bmin, args.bmax, args.points, registry, args.threads)
    if args.format == "json":
        d.to_json(out.buffer)
    else:
        d.to_csv(out.buffer)
    clauses = [f"DATA skip 1 using 1:((strcol(2) eq '{format_half(mi)}' && strcol(3) eq '{format_half(mj)}') "
               f"? $4 : NaN) with lines title '{format_half(mi)},{format_half(mj)}'"
               for mi, mj in d.ordered_labels()]
    _plotscript(args, "set xlabel 'B (T)'\nset ylabel 'E/h (MHz)'\nplot " + ", \\\n     ".join(clauses))
    return {}


def cmd_fidelity(args, registry, out: Output) -> dict:
    if args.points > 1 and args.bmax <= args.bmin:
        raise _Usage("--bmax must exceed --bmin")
    if args.qubit == "best":
        raise _Usage("fidelity needs an explicit --qubit")
    curve = fidelity_sweep(args.species, args.qubit, args.bmin, args.bmax, args.points, registry, args.threads)
    if args.mode == "algebraic":
        curve.to_csv(out.buffer)
        extra = {}
    else:
        out.buffer.write("B_T,fidelity_master,fidelity_algebraic,cross_check_delta,purity\n")
        worst = 0.0
        for p in curve.points:
            me = master_equation_transfer(args.species, args.qubit, p.B, registry=registry)
            d = me.fidelity - p.fidelity
            worst = max(worst, abs(d))
            out.buffer.write(f"{p.B:.11e},{me.fidelity:.11e},{p.fidelity:.11e},{d:.3e},{p.purity:.11e}\n")
        extra = {"max_abs_cross_check_delta": float(f"{worst:.3e}")}
    _plotscript(args, "set xlabel 'B (T)'\nset ylabel 'F'\nset yrange [0:1]\n"
                      "plot DATA skip 1 using 1:2 with lines title 'fidelity', 0.99 title '0.99'")
    return {"qubit": str(args.qubit), "mode": args.mode, **extra}


def cmd_cool(args, registry, out: Output) -> dict:
    overrides = {"n_max": args.n_max, "pulse_time": args.pulse_time, "quench_rate": args.quench_rate,
                 "pulse": args.pulse, "branching": args.branching}
    if args.gamma_clock is not None:
        overrides["gamma_clock"] = args.gamma_clock
    if args.eta is not None:
        overrides["eta_recoil"] = args.eta
    if args.carrier is not None:
        overrides["carrier_excitation"] = args.carrier
    p = cooling_params(args.species, args.omega, registry, **overrides)
    n0 = fock_distribution(args.n0, p.n_max) if args.n0 is not None else thermal_distribution(args.nbar0, p.n_max)
    traj: CoolingTrajectory = simulate_cooling(p, n0, args.cycles)
    traj.to_csv(out.buffer)
    extra = {"eta_recoil": p.eta, "eta_clock": p.eta_clock, "p_carrier": p.p_carrier,
             "gamma_clock_Hz": p.gamma_clock, "effective_gamma_Hz": p.effective_gamma(),
             "steady_state_n": steady_state_n(p.gamma_clock, p.trap.omega_v),
             "truncation_loss": float(traj.truncation_loss[-1])}
    if args.mc_samples:
        if out.streaming:
            raise _Usage("--mc-samples needs --out FILE")
        mc = monte_carlo_cooling(p, n0, args.cycles, args.mc_samples, args.seed, workers=args.threads)
        with open(out.sibling(".montecarlo.csv"), "w", newline="\n") as fh:
            fh.write("cycle,mean_n_rate,mean_n_mc,stderr_mc\n")
            for k, (a, b, s) in enumerate(zip(traj.mean_n, mc.mean_n, mc.stderr)):
                fh.write(f"{k},{a:.11e},{b:.11e},{s:.11e}\n")
        extra["mc_samples"] = args.mc_samples
    _plotscript(args, "set xlabel 'cycle'\nset ylabel '<n>'\nset logscale y\n"
                      "plot DATA skip 1 using 1:2 with linespoints title '<n>'")
    return extra


def cmd_find_field(args, registry, out: Output) -> dict:
    if args.qubit == "best":
        r = best_pair_min_field(args.species, args.target, args.bhi, registry)
    else:
        r = find_min_field(args.species, args.qubit, args.target, args.bhi, registry=registry)
    if r.non_monotone:
        sys.stderr.write("warning: non-monotone fidelity below the reported field (largest crossing reported)\n")
    if not out.streaming:
        print(f"{r.B:.3g}")
    out.buffer.write(f"{r.B:.3g}\n")
    return {"qubit": str(r.encoding), "target": r.target, "fidelity_at_B": r.fidelity,
            "non_monotone": r.non_monotone, "B_hi_T": r.B_hi, "B_T_full": r.B}


def cmd_report(args, registry, out: Output) -> dict:
    if args.kind == "readout":
        if args.B is None:
            raise _Usage("--B is required for --kind readout")
        rep = readout_report(args.species, args.B, args.threshold, registry)
    elif args.kind == "pairs":
        rep = pair_degeneracy_audit(args.species, args.bmin, args.bmax, args.points, registry)
    else:
        if args.B is None:
            raise _Usage("--B is required for --kind shelving")
        rep = shelving_plan(args.species, args.B, args.target_mI, args.bandwidth, registry)
    if args.format == "json":
        rep.to_json(out.buffer)
    else:
        out.buffer.write(rep.to_text())
    return {"kind": args.kind}


def cmd_species(args, registry, out: Output) -> dict:
    if not args.show:
        for name in registry.names():
            out.buffer.write(name + "\n")
        return {}
    sp = registry.get(args.show)
    if args.format == "config":
        out.buffer.write(to_config(sp))
        return {}
    rows = [("key", "value", "provenance")]
    for line in to_config(sp).splitlines():
        entry, _, note = line.partition("  # ")
        key, _, value = entry.partition(" = ")
        rows.append((key, value, note))
    widths = [max(len(r[i]) for r in rows) for i in range(2)]
    for a, b, c in rows:
        out.buffer.write(f"{a:<{widths[0]}}  {b:<{widths[1]}}  {c}".rstrip() + "\n")
    return {}


class _Usage(Exception):
    pass


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    g = common.add_argument_group("common options")
    g.add_argument("--config", action="append", default=[], metavar="PATH",
                   help="extra species config file (repeatable); SPINCOOL_SPECIES_PATH is read as well")
    g.add_argument("--threads", type=positive_int, default=None, metavar="N", help="cap on worker threads")
    g.add_argument("--out", default="-", metavar="PATH", help="output file, '-' for stdout (default)")
    g.add_argument("--seed", type=int, default=0, help="random seed (Monte-Carlo oracle)")
    g.add_argument("--emit-plotscript", nargs="?", const="", default=None, metavar="PATH",
                   help="also write a gnuplot script (default <out>.gp)")

    parser = argparse.ArgumentParser(prog="spincool", description=__doc__.split("\n\n")[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True, metavar="COMMAND")

    p = sub.add_parser("zeeman", parents=[common], help="energy-level diagram over a field sweep")
    p.add_argument("--species", required=True)
    p.add_argument("--level", default="1P1")
    p.add_argument("--bmin", type=field, default=0.0)
    p.add_argument("--bmax", type=field, required=True)
    p.add_argument("--points", type=int, default=200)
    p.add_argument("--format", choices=("csv", "json"), default="csv")
    p.set_defaults(func=cmd_zeeman)

    p = sub.add_parser("fidelity", parents=[common], help="coherence-transfer fidelity over a field sweep",
                       epilog=QUBIT_HELP)
    p.add_argument("--species", required=True)
    p.add_argument("--qubit", type=qubit, required=True, help=QUBIT_HELP)
    p.add_argument("--bmin", type=field, default=0.0)
    p.add_argument("--bmax", type=field, required=True)
    p.add_argument("--points", type=positive_int, default=200)
    p.add_argument("--mode", choices=("algebraic", "master-equation"), default="algebraic")
    p.set_defaults(func=cmd_fidelity)

    p = sub.add_parser("cool", parents=[common], help="sideband-cooling rate-equation trajectory")
    p.add_argument("--species", required=True)
    p.add_argument("--omega", type=float, required=True, help="trap frequency omega_v/2pi (kHz)")
    p.add_argument("--gamma-clock", type=float, default=None, help="clock linewidth gamma/2pi (Hz)")
    p.add_argument("--cycles", type=int, default=50)
    p.add_argument("--n-max", type=int, default=40)
    p.add_argument("--pulse-time", type=float, default=100.0, help="sideband pi-pulse duration (us)")
    p.add_argument("--quench-rate", type=float, default=1.0, help="3P0 depopulation rate (1/us)")
    p.add_argument("--pulse", choices=("ideal", "rabi"), default="ideal")
    p.add_argument("--branching", choices=("franck-condon", "lamb-dicke"), default="franck-condon")
    p.add_argument("--eta", type=float, default=None, help="override the recycle Lamb-Dicke parameter")
    p.add_argument("--carrier", type=float, default=None, help="override the carrier excitation per pulse")
    init = p.add_mutually_exclusive_group()
    init.add_argument("--nbar0", type=float, default=2.0, help="initial thermal occupation")
    init.add_argument("--n0", type=int, default=None, help="initial Fock state")
    p.add_argument("--mc-samples", type=int, default=0, help="also run the Monte-Carlo oracle")
    p.set_defaults(func=cmd_cool)

    p = sub.add_parser("find-field", parents=[common], help="minimum field for a target fidelity (tesla)",
                       epilog=QUBIT_HELP + "; 'best' scans every +-m_I pair")
    p.add_argument("--species", required=True)
    p.add_argument("--qubit", type=qubit, required=True)
    p.add_argument("--target", type=float, default=0.99)
    p.add_argument("--bhi", type=field, default=None, help="upper bracket (default: deep Paschen-Back)")
    p.set_defaults(func=cmd_find_field)

    p = sub.add_parser("report", parents=[common], help="readout, pair-degeneracy or shelving report")
    p.add_argument("--kind", choices=("readout", "pairs", "shelving"), required=True)
    p.add_argument("--species", default="sr87")
    p.add_argument("--B", type=field, default=None, help="field for readout and shelving")
    p.add_argument("--threshold", type=float, default=3.0, help="resolvable if splitting/linewidth exceeds this")
    p.add_argument("--bmin", type=field, default=0.05)
    p.add_argument("--bmax", type=field, default=0.12)
    p.add_argument("--points", type=positive_int, default=71)
    p.add_argument("--target-mI", type=half, default=Fraction(9, 2))
    p.add_argument("--bandwidth", type=float, default=1e-4, help="selective pulse bandwidth (MHz)")
    p.add_argument("--format", choices=("text", "json"), default="text")
    p.set_defaults(func=cmd_report)

    p = sub.add_parser("species", parents=[common], help="list species or show one parameter table")
    p.add_argument("--show", metavar="NAME", default=None)
    p.add_argument("--format", choices=("table", "config"), default="table")
    p.set_defaults(func=cmd_species)
    return parser


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        registry = default_registry()
        for path in args.config:
            registry = registry.with_config(path)
        if getattr(args, "species", None) is not None and args.species not in registry:
            registry.get(args.species)
        out = Output(args.out)
        extra = args.func(args, registry, out)
        out.commit(manifest(args, registry, argv, extra))
    except _Usage as exc:
        parser.print_usage(sys.stderr)
        sys.stderr.write(f"spincool: error: {exc}\n")
        return 2
    except SpinCoolError as exc:
        sys.stderr.write(f"{type(exc).__name__}: {exc}\n")
        return 3
    except OSError as exc:
        sys.stderr.write(f"IOError: {exc}\n")
        return 4
    except ValueError as exc:
        sys.stderr.write(f"{type(exc).__name__}: {exc}\n")
        return 3
    return 0


if __name__ == "__main__":
    sys.exit(main())
