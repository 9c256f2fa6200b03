"""Command-line front end.

    twocharge SUBCOMMAND scenario.ini [--set section.key=value ...] [--output-dir DIR]

Exit status: 0 success, 1 invalid input, 2 runtime failure (collision,
step underflow, failed integration).
"""
from __future__ import annotations

import argparse
import datetime
import json
import math
import os
import sys
import tempfile

import numpy as np

from . import __version__
from .atomfield import ValidityRegionError, averaged_moment, check_validity, field_map, sphere_probes
from .core import SingularConfigurationError, derived_quantities
from .dynamics import IntegrationError, compare_trajectories, integrate
from .fields import FieldModelError
from .scenario import ScenarioError, parse_scenario, serialize_scenario
from .sterngerlach import simulate

SUBCOMMANDS = ("simulate-direct", "simulate-reduced", "compare", "ensemble", "fieldmap", "moment")
UNITS = "Gaussian units; lengths, times and masses in the scenario's units (presets: electron mass, charge and Bohr radius = 1)"

TRAJECTORY_COLUMNS = [
    "t",
    "R_x", "R_y", "R_z",
    "Rdot_x", "Rdot_y", "Rdot_z",
    "r_x", "r_y", "r_z",
    "rdot_x", "rdot_y", "rdot_z",
    "E",
    "L_x", "L_y", "L_z",
    "S_x", "S_y", "S_z",
]  # fmt: skip
FIELDMAP_COLUMNS = ["x", "y", "z"] + [
    f"{name}_{c}" for name in ("A", "H1", "H2", "E", "A1", "A2") for c in "xyz"
]
ENDPOINT_COLUMNS = [
    "atom", "failed",
    "R0_x", "R0_y", "R0_z",
    "R_x", "R_y", "R_z",
    "Rdot_x", "Rdot_y", "Rdot_z",
    "dR_x", "dR_y", "dR_z",
    "L_x", "L_y", "L_z",
    "S_x", "S_y", "S_z",
]  # fmt: skip


class _Outputs:
    """Collects files written by one run so they can be removed on failure."""

    def __init__(self, directory, prefix, fmt):
        self.directory = directory
        self.prefix = prefix
        self.format = fmt
        self.written = []

    def path(self, name, ext):
        return os.path.join(self.directory, f"{self.prefix}_{name}.{ext}")

    def write_text(self, name, ext, text):
        os.makedirs(self.directory, exist_ok=True)
        path = self.path(name, ext)
        fd, tmp = tempfile.mkstemp(dir=self.directory, prefix=".partial-")
        with os.fdopen(fd, "w", newline="\n") as fh:
            fh.write(text)
        os.replace(tmp, path)
        self.written.append(path)
        return path

    def write_table(self, name, columns, rows, title):
        """CSV with a units/columns header, or JSON lines when format = jsonl."""
        rows = np.asarray(rows, dtype=float)
        if self.format == "jsonl":
            lines = [json.dumps({"units": UNITS, "title": title, "columns": columns})]
            for row in rows:
                lines.append(json.dumps(dict(zip(columns, (_num(x) for x in row)))))
            return self.write_text(name, "jsonl", "\n".join(lines) + "\n")
        lines = [f"# {title}; units: {UNITS}; columns: {','.join(columns)}", ",".join(columns)]
        for row in rows:
            lines.append(",".join(_fmt(x) for x in row))
        return self.write_text(name, "csv", "\n".join(lines) + "\n")

    def discard(self):
        for path in self.written:
            try:
                os.remove(path)
            except FileNotFoundError:
                pass
        self.written = []


def _fmt(x):
    x = float(x)
    if x == int(x) and abs(x) < 1e15:
        return str(int(x))
    return f"{x:.17g}"


def _num(x):
    x = float(x)
    return x if math.isfinite(x) else str(x)


def _trajectory_rows(tr):
    m = tr.monitors if tr.monitors is not None else derived_quantities(tr.states, tr.constants)
    s = tr.states
    return np.column_stack([tr.times, s.R, s.Rdot, s.r, s.rdot, m.E, m.L, m.S])


def _simulate(sc, out, equations):
    tr = integrate(equations, sc.initial_state(), sc.field_model(), sc.constants(), sc.integrator_spec())
    label = "direct" if equations == "direct" else "reduced"
    out.write_table(label, TRAJECTORY_COLUMNS, _trajectory_rows(tr), f"{label} trajectory ({tr.equations} equations)")
    return tr


def cmd_simulate_direct(sc, out):
    _simulate(sc, out, "direct")


def cmd_simulate_reduced(sc, out):
    _simulate(sc, out, sc.reduced_equations())


def cmd_compare(sc, out):
    direct = _simulate(sc, out, "direct")
    reduced = _simulate(sc, out, sc.reduced_equations())
    cmp = compare_trajectories(reduced, direct)
    threshold = sc.section("output")["compare_threshold"]
    worst = max(cmp.rms_R, cmp.rms_r)
    lines = [
        "# reduced vs direct deviation (RMS and max over samples, divided by the initial |r|)",
        f"equations = {reduced.equations}",
        f"samples = {len(direct.times)}",
        f"scale = {cmp.scale:.17g}",
        f"rms_R = {cmp.rms_R:.17g}",
        f"rms_r = {cmp.rms_r:.17g}",
        f"max_R = {cmp.max_R:.17g}",
        f"max_r = {cmp.max_r:.17g}",
        f"threshold = {threshold:.17g}",
        f"within_threshold = {str(worst <= threshold).lower()}",
    ]
    out.write_text("compare", "txt", "\n".join(lines) + "\n")


def cmd_ensemble(sc, out):
    spec = sc.ensemble_spec()
    stats = simulate(spec)
    out.write_text("ensemble", "txt", stats.report())
    n = stats.n_atoms
    failed = np.zeros(n)
    failed[list(stats.failed)] = 1
    free = stats.initial.R + stats.initial.Rdot * stats.flight_time
    L = stats.L_final if stats.L_final is not None else np.full((n, 3), np.nan)
    S = stats.S_final if stats.S_final is not None else np.full((n, 3), np.nan)
    rows = np.column_stack(
        [np.arange(n), failed, stats.initial.R, stats.final.R, stats.final.Rdot, stats.final.R - free, L, S]
    )
    out.write_table("endpoints", ENDPOINT_COLUMNS, rows, "per-atom beam endpoints")
    if not stats.valid:
        raise RuntimeError(f"{stats.n_failed} of {n} atoms failed (more than 1%); run flagged invalid")


def _probe_time(sc, tr):
    t = sc.section("probes").get("time")
    if t is None:
        return float(tr.times[len(tr.times) // 2])
    i = int(np.argmin(np.abs(tr.times - t)))
    return float(tr.times[i])


def cmd_fieldmap(sc, out):
    p = sc.section("probes")
    if not p or p["grid_min"] is None or p["grid_max"] is None or p["grid_n"] is None:
        raise ScenarioError("fieldmap needs [probes] grid_min, grid_max and grid_n")
    k = sc.constants()
    axes = [np.linspace(lo, hi, int(n)) for lo, hi, n in zip(p["grid_min"], p["grid_max"], p["grid_n"])]
    grid = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, 3)
    s0 = sc.initial_state()
    # check the grid before spending time on the integration
    check_validity(s0, grid, p["k_valid"])
    tr = integrate(sc.reduced_equations(), s0, sc.field_model(), k, sc.integrator_spec())
    t = _probe_time(sc, tr)
    values = field_map(tr, grid, k, t, k_valid=p["k_valid"])
    out.write_table("fieldmap", FIELDMAP_COLUMNS, np.column_stack([grid, values]), f"far-field map at t = {t:.17g}")


def cmd_moment(sc, out):
    p = sc.section("probes")
    k = sc.constants()
    s0 = sc.initial_state()
    radius = p.get("radius") if p else None
    if radius is None:
        radius = 10.0 * float(np.linalg.norm(s0.r))
    probes = sphere_probes(s0.R, radius, p.get("count", 26) if p else 26, p.get("seed", 0) if p else 0)
    k_valid = p.get("k_valid", 5.0) if p else 5.0
    check_validity(s0, probes, k_valid)
    tr = integrate(sc.reduced_equations(), s0, sc.field_model(), k, sc.integrator_spec())
    m = averaged_moment(tr, k, probes, k_valid=k_valid)
    rel = (m.g_measured / m.g_predicted - 1.0) if m.g_predicted != 0 else float("nan")
    lines = [
        "# time-averaged magnetic moment (Gaussian units)",
        f"n_periods = {m.n_periods}",
        f"period = {m.period:.17g}",
        f"probes = {len(probes)}",
        f"probe_radius = {radius:.17g}",
        "mu_avg = " + " ".join(f"{x:.17g}" for x in m.mu_avg),
        "L_avg = " + " ".join(f"{x:.17g}" for x in m.L_avg),
        "p_initial = " + " ".join(f"{x:.17g}" for x in m.p),
        f"g_measured = {m.g_measured:.17g}",
        f"g_predicted = {m.g_predicted:.17g}",
        f"g_relative_error = {rel:.17g}",
        f"fit_residual = {m.fit_residual:.17g}",
        f"discarded_ratio = {m.discarded_ratio:.17g}",
    ]
    out.write_text("moment", "txt", "\n".join(lines) + "\n")


COMMANDS = {
    "simulate-direct": cmd_simulate_direct,
    "simulate-reduced": cmd_simulate_reduced,
    "compare": cmd_compare,
    "ensemble": cmd_ensemble,
    "fieldmap": cmd_fieldmap,
    "moment": cmd_moment,
}


def build_parser():
    parser = argparse.ArgumentParser(prog="twocharge", description="Two-charge atom dynamics in magnetic fields.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in SUBCOMMANDS:
        p = sub.add_parser(name)
        p.add_argument("scenario", help="scenario file")
        p.add_argument("--set", action="append", default=[], metavar="SECTION.KEY=VALUE", help="override a key")
        p.add_argument("--output-dir", help="override [output] directory")
    return parser


def run(command, scenario_text, overrides=(), output_dir=None, scenario_path=None):
    """Execute one subcommand; returns the exit status."""
    out = None
    try:
        overrides = list(overrides)
        if output_dir is not None:
            overrides.append(f"output.directory={output_dir}")
        sc = parse_scenario(scenario_text, overrides)
        o = sc.section("output") or {"directory": "output", "prefix": "run", "format": "csv"}
        out = _Outputs(o.get("directory", "output"), o.get("prefix", "run"), o.get("format", "csv"))
        COMMANDS[command](sc, out)
        manifest = {
            "software": "twocharge",
            "version": __version__,
            "command": command,
            "scenario_file": scenario_path,
            "scenario": serialize_scenario(sc),
            "outputs": [os.path.basename(p) for p in out.written],
            "created": datetime.datetime.now(datetime.timezone.utc).isoformat(),
        }
        out.write_text("manifest", "json", json.dumps(manifest, indent=2) + "\n")
        return 0
    except (SingularConfigurationError, IntegrationError, RuntimeError) as exc:
        _fail(out, f"runtime error: {exc}")
        return 2
    except (ScenarioError, ValidityRegionError, FieldModelError, ValueError, TypeError) as exc:
        _fail(out, f"invalid input: {exc}")
        return 1
    except OSError as exc:
        _fail(out, f"i/o error: {exc}")
        return 2


def _fail(out, message):
    if out is not None:
        out.discard()
    print(f"twocharge: {message}", file=sys.stderr)


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        with open(args.scenario, encoding="utf-8") as fh:
            text = fh.read()
    except OSError as exc:
        print(f"twocharge: cannot read scenario: {exc}", file=sys.stderr)
        return 1
    return run(args.command, text, args.set, args.output_dir, scenario_path=args.scenario)


if __name__ == "__main__":
    sys.exit(main())
