"""Scenario files: a sectioned key = value format that fully determines a run.

Sections and keys (vectors are whitespace-separated numbers)::

    [constants]   preset = hydrogen | positronium | custom
                  m_p, m_e, e, c          (required for custom, optional overrides otherwise)
                  softening = 0.0
    [field]       model = zero | uniform | linear | stern-gerlach
                  H0 = x y z              (uniform, linear)
                  G = 9 numbers, row-major (linear)
                  h, g                    (stern-gerlach: H0 = (0,0,h), G = diag(-g,0,g))
    [initial]     kind = circular | state
                  radius, normal, phase   (circular)
                  r, rdot                 (state)
                  R, Rdot                 (both; default zero)
    [ensemble]    n_atoms, internal = circular | linear, radius, axis = isotropic | x y z,
                  axis_spread, beam_velocity, jitter, seed, equations
    [integrator]  method = rk4 | rk45, exactly one of t_end / periods,
                  step, steps_per_period, tol, sample_every,
                  reduced_form = full | simplified
    [probes]      time, k_valid, grid_min, grid_max, grid_n, radius, count, seed
    [output]      directory, prefix, format = csv | jsonl, compare_threshold

``periods`` counts internal periods of the initial state (the circular or
oscillation period of the ensemble when there is no [initial] section).
"""
from __future__ import annotations

import configparser
import math
import re
from dataclasses import dataclass

import numpy as np

from .core import ComState, Constants, circular_angular_frequency, circular_orbit
from .dynamics import IntegratorSpec, osculating_period
from .fields import FieldModelError, LinearField, UniformField, stern_gerlach_field, zero_field
from .sterngerlach import EnsembleSpec, oscillation_period


class ScenarioError(ValueError):
    """Invalid scenario text; the message names the section, key and line."""


def _float(s):
    v = float(s)
    if not math.isfinite(v):
        raise ValueError("must be finite")
    return v


def _int(s):
    v = int(s)
    return v


def _vec(n):
    def parse(s):
        parts = s.split()
        if len(parts) != n:
            raise ValueError(f"expected {n} numbers, got {len(parts)}")
        return tuple(_float(p) for p in parts)

    return parse


def _choice(*options):
    def parse(s):
        s = s.strip().lower()
        if s not in options:
            raise ValueError(f"must be one of {', '.join(options)}")
        return s

    return parse


def _axis(s):
    if s.strip().lower() == "isotropic":
        return "isotropic"
    return _vec(3)(s)


def _text(s):
    s = s.strip()
    if not s:
        raise ValueError("must not be empty")
    return s


SCHEMA = {
    "constants": {
        "preset": (_choice("hydrogen", "positronium", "custom"), "hydrogen"),
        "m_p": (_float, None),
        "m_e": (_float, None),
        "e": (_float, None),
        "c": (_float, None),
        "softening": (_float, 0.0),
    },
    "field": {
        "model": (_choice("zero", "uniform", "linear", "stern-gerlach"), None),
        "H0": (_vec(3), None),
        "G": (_vec(9), None),
        "h": (_float, None),
        "g": (_float, None),
    },
    "initial": {
        "kind": (_choice("circular", "state"), "circular"),
        "radius": (_float, 1.0),
        "normal": (_vec(3), (0.0, 0.0, 1.0)),
        "phase": (_float, 0.0),
        "r": (_vec(3), None),
        "rdot": (_vec(3), None),
        "R": (_vec(3), (0.0, 0.0, 0.0)),
        "Rdot": (_vec(3), (0.0, 0.0, 0.0)),
    },
    "ensemble": {
        "n_atoms": (_int, None),
        "internal": (_choice("circular", "linear"), "circular"),
        "radius": (_float, 1.0),
        "axis": (_axis, "isotropic"),
        "axis_spread": (_float, 0.0),
        "beam_velocity": (_vec(3), (0.0, 0.0, 0.0)),
        "jitter": (_vec(3), (0.0, 0.0, 0.0)),
        "seed": (_int, 0),
        "equations": (_choice("reduced", "direct", "simplified"), "reduced"),
    },
    "integrator": {
        "method": (_choice("rk4", "rk45"), "rk4"),
        "t_end": (_float, None),
        "periods": (_float, None),
        "step": (_float, None),
        "steps_per_period": (_int, 2000),
        "tol": (_float, 1e-10),
        "sample_every": (_int, 1),
        "reduced_form": (_choice("full", "simplified"), "full"),
    },
    "probes": {
        "time": (_float, None),
        "k_valid": (_float, 5.0),
        "grid_min": (_vec(3), None),
        "grid_max": (_vec(3), None),
        "grid_n": (_vec(3), None),
        "radius": (_float, None),
        "count": (_int, 26),
        "seed": (_int, 0),
    },
    "output": {
        "directory": (_text, "output"),
        "prefix": (_text, "run"),
        "format": (_choice("csv", "jsonl"), "csv"),
        "compare_threshold": (_float, 1e-9),
    },
}
REQUIRED_SECTIONS = ("constants", "field", "integrator")
REQUIRED_KEYS = {
    "field": ("model",),
    "ensemble": ("n_atoms",),
}
# r/R, rdot/Rdot and g/G differ only in case, so case-insensitive matching
# is allowed only where it is unambiguous
_FOLDED = {
    s: {k.lower(): k for k in keys if sum(o.lower() == k.lower() for o in keys) == 1} for s, keys in SCHEMA.items()
}


def _canonical(section, key):
    if key in SCHEMA[section]:
        return key
    return _FOLDED[section].get(key.lower())


def _line_of(text, section, key=None):
    current = None
    for n, line in enumerate(text.splitlines(), start=1):
        stripped = line.strip()
        m = re.match(r"\[([^\]]+)\]", stripped)
        if m:
            current = m.group(1).strip().lower()
            if key is None and current == section:
                return n
            continue
        if current == section and key is not None:
            m = re.match(r"([^=:#;\s]+)\s*[=:]", stripped)
            if m and _canonical(section, m.group(1)) == _canonical(section, key):
                return n
    return None


def _where(text, section, key=None, origin=None):
    if origin is not None:
        return f"{origin}"
    line = _line_of(text, section, key) if text is not None else None
    loc = f"[{section}]" + (f" {key}" if key else "")
    return f"line {line}: {loc}" if line else loc


@dataclass(frozen=True)
class Scenario:
    """Normalised, typed key values of every present section.

    Equality compares these values, so a scenario equals its serialised and
    re-parsed self.
    """

    values: dict

    def __eq__(self, other):
        return isinstance(other, Scenario) and _canon(self.values) == _canon(other.values)

    def __hash__(self):
        return hash(repr(_canon(self.values)))

    def section(self, name):
        return self.values.get(name, {})

    def has(self, name):
        return name in self.values

    def constants(self) -> Constants:
        v = self.values["constants"]
        preset = v["preset"]
        if preset == "hydrogen":
            k = Constants.hydrogen()
        elif preset == "positronium":
            k = Constants.positronium()
        else:
            k = None
        kwargs = {}
        for name in ("m_p", "m_e", "e", "c"):
            if v.get(name) is not None:
                kwargs[name] = v[name]
            elif k is not None:
                kwargs[name] = getattr(k, name)
        kwargs["softening"] = v["softening"]
        return Constants(**kwargs)

    def field_model(self):
        v = self.values["field"]
        model = v["model"]
        if model == "zero":
            return zero_field()
        if model == "uniform":
            return UniformField(v["H0"])
        if model == "linear":
            return LinearField(v["H0"], np.array(v["G"]).reshape(3, 3))
        return stern_gerlach_field(v["h"], v["g"])

    def initial_state(self) -> ComState:
        if "initial" not in self.values:
            raise ScenarioError("this subcommand needs an [initial] section")
        v = self.values["initial"]
        k = self.constants()
        if v["kind"] == "circular":
            return circular_orbit(k, v["radius"], normal=v["normal"], phase=v["phase"], R=v["R"], Rdot=v["Rdot"])
        return ComState(R=v["R"], Rdot=v["Rdot"], r=v["r"], rdot=v["rdot"])

    def _period(self):
        k = self.constants()
        if "initial" in self.values:
            v = self.values["initial"]
            if v["kind"] == "circular" and k.softening == 0.0:
                return 2.0 * math.pi / float(circular_angular_frequency(k, v["radius"]))
            return float(osculating_period(self.initial_state(), k))
        if "ensemble" in self.values:
            e = self.values["ensemble"]
            if e["internal"] == "linear":
                return oscillation_period(k, e["radius"])
            return 2.0 * math.pi / float(circular_angular_frequency(k, e["radius"]))
        raise ScenarioError("[integrator] periods needs an [initial] or [ensemble] section to define the period")

    def integrator_spec(self) -> IntegratorSpec:
        v = self.values["integrator"]
        t_end = v["t_end"] if v["t_end"] is not None else v["periods"] * self._period()
        return IntegratorSpec(
            t_end=t_end,
            method=v["method"],
            step=v["step"],
            steps_per_period=v["steps_per_period"],
            tol=v["tol"],
            sample_every=v["sample_every"],
        )

    def reduced_equations(self):
        return "simplified" if self.values["integrator"]["reduced_form"] == "simplified" else "reduced"

    def ensemble_spec(self) -> EnsembleSpec:
        if "ensemble" not in self.values:
            raise ScenarioError("this subcommand needs an [ensemble] section")
        v = self.values["ensemble"]
        return EnsembleSpec(
            n_atoms=v["n_atoms"],
            integrator=self.integrator_spec(),
            internal=v["internal"],
            radius=v["radius"],
            axis=None if v["axis"] == "isotropic" else v["axis"],
            axis_spread=v["axis_spread"],
            beam_velocity=v["beam_velocity"],
            jitter=v["jitter"],
            seed=v["seed"],
            constants=self.constants(),
            field=self.field_model(),
            equations=v["equations"],
        )


def _canon(values):
    return tuple(sorted((s, tuple(sorted(d.items()))) for s, d in values.items()))


def _read(text):
    cp = configparser.ConfigParser(interpolation=None, delimiters=("=",), comment_prefixes=("#", ";"))
    cp.optionxform = str
    try:
        cp.read_string(text)
    except configparser.DuplicateOptionError as exc:
        raise ScenarioError(f"line {exc.lineno}: [{exc.section}] {exc.option} given twice") from None
    except configparser.DuplicateSectionError as exc:
        raise ScenarioError(f"line {exc.lineno}: section [{exc.section}] given twice") from None
    except configparser.MissingSectionHeaderError as exc:
        raise ScenarioError(f"line {exc.lineno}: key outside any [section]") from None
    except configparser.ParsingError as exc:
        raise ScenarioError(f"unparseable scenario text: {exc}") from None
    return {s: dict(cp.items(s)) for s in cp.sections()}


def parse_scenario(text, overrides=()) -> Scenario:
    """Parse and validate scenario text.

    ``overrides`` is a sequence of ``"section.key=value"`` strings applied on
    top of the text (command-line ``--set``).
    """
    raw = _read(text)
    origins = {}
    for item in overrides:
        if "=" not in item or "." not in item.split("=", 1)[0]:
            raise ScenarioError(f"--set {item!r}: expected section.key=value")
        lhs, value = item.split("=", 1)
        section, key = lhs.split(".", 1)
        section = section.strip().lower()
        raw.setdefault(section, {})[key.strip()] = value.strip()
        origins[(section, key.strip())] = f"--set {lhs.strip()}"

    values = {}
    for section, items in raw.items():
        if section not in SCHEMA:
            raise ScenarioError(f"{_where(text, section)}: unknown section (known: {', '.join(SCHEMA)})")
        out = {}
        for key, value in items.items():
            canonical = _canonical(section, key)
            if canonical is None:
                where = _where(text, section, key, origins.get((section, key)))
                raise ScenarioError(f"{where}: unknown key (known: {', '.join(SCHEMA[section])})")
            parser = SCHEMA[section][canonical][0]
            try:
                out[canonical] = parser(value)
            except ValueError as exc:
                where = _where(text, section, key, origins.get((section, key)))
                raise ScenarioError(f"{where} = {value!r}: {exc}") from None
        for key, (_, default) in SCHEMA[section].items():
            out.setdefault(key, default)
        values[section] = out
    for section in REQUIRED_SECTIONS:
        if section not in values:
            raise ScenarioError(f"missing required section [{section}]")
    for section, keys in REQUIRED_KEYS.items():
        for key in keys:
            if section in values and values[section].get(key) is None:
                raise ScenarioError(f"{_where(text, section)}: missing required key {key!r}")
    scenario = Scenario(values)
    _validate(scenario, text, origins)
    return scenario


def _validate(sc: Scenario, text, origins):
    def fail(section, key, message):
        where = _where(text, section, key, origins.get((section, key)) if key else None)
        raise ScenarioError(f"{where}: {message}")

    c = sc.values["constants"]
    if c["preset"] == "custom":
        for key in ("m_p", "m_e"):
            if c[key] is None:
                fail("constants", None, f"custom preset needs {key}")
    try:
        sc.constants()
    except ValueError as exc:
        fail("constants", None, str(exc))

    f = sc.values["field"]
    needs = {"uniform": ("H0",), "linear": ("H0", "G"), "stern-gerlach": ("h", "g"), "zero": ()}[f["model"]]
    for key in needs:
        if f[key] is None:
            fail("field", "model", f"model {f['model']} needs key {key!r}")
    for key in ("H0", "G", "h", "g"):
        if f[key] is not None and key not in needs:
            fail("field", key, f"not used by model {f['model']}")
    try:
        sc.field_model()
    except FieldModelError as exc:
        fail("field", "G" if f["model"] == "linear" else None, str(exc))

    if sc.has("initial"):
        v = sc.values["initial"]
        if v["kind"] == "state":
            for key in ("r", "rdot"):
                if v[key] is None:
                    fail("initial", "kind", f"kind = state needs key {key!r}")
        else:
            if not v["radius"] > 0:
                fail("initial", "radius", "must be positive")
            if not any(v["normal"]):
                fail("initial", "normal", "must be nonzero")
            for key in ("r", "rdot"):
                if v[key] is not None:
                    fail("initial", key, "only used with kind = state")

    i = sc.values["integrator"]
    if (i["t_end"] is None) == (i["periods"] is None):
        fail("integrator", None, "give exactly one of t_end or periods")
    if i["periods"] is not None and not i["periods"] > 0:
        fail("integrator", "periods", "must be positive")
    try:
        sc.integrator_spec()
    except ValueError as exc:
        fail("integrator", None, str(exc))

    if sc.has("ensemble"):
        try:
            sc.ensemble_spec()
        except ValueError as exc:
            fail("ensemble", None, str(exc))

    if sc.has("probes"):
        p = sc.values["probes"]
        if not p["k_valid"] > 0:
            fail("probes", "k_valid", "must be positive")
        if p["grid_n"] is not None:
            if any(n < 1 or n != int(n) for n in p["grid_n"]):
                fail("probes", "grid_n", "must be positive integers")
        if p["radius"] is not None and not p["radius"] > 0:
            fail("probes", "radius", "must be positive")
        if p["count"] < 1:
            fail("probes", "count", "must be positive")


def _format(value):
    if isinstance(value, tuple):
        return " ".join(_format(x) for x in value)
    if isinstance(value, float):
        return repr(value)
    return str(value)


def serialize_scenario(sc: Scenario) -> str:
    """Canonical text; parse_scenario(serialize_scenario(sc)) == sc."""
    lines = []
    for section in SCHEMA:
        if section not in sc.values:
            continue
        lines.append(f"[{section}]")
        for key in SCHEMA[section]:
            value = sc.values[section].get(key)
            if value is not None:
                lines.append(f"{key} = {_format(value)}")
        lines.append("")
    return "\n".join(lines)
