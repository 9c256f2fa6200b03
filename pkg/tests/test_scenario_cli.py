import json
import os

import numpy as np
import pytest

from twocharge.cli import main, run
from twocharge.scenario import ScenarioError, parse_scenario, serialize_scenario

MINIMAL = """\
[constants]
preset = hydrogen

[field]
model = zero

[initial]
kind = circular

[integrator]
periods = 1
"""

SCENARIOS = os.path.join(os.path.dirname(__file__), "..", "scenarios")


def test_minimal_scenario_fills_defaults():
    sc = parse_scenario(MINIMAL)
    assert sc.section("initial")["radius"] == 1.0
    assert sc.section("integrator")["method"] == "rk4"
    assert sc.section("integrator")["steps_per_period"] == 2000
    assert sc.constants().softening == 0.0
    spec = sc.integrator_spec()
    assert spec.t_end == pytest.approx(2 * np.pi * np.sqrt(sc.constants().mu), rel=1e-14)


def test_trace_of_gradient_rejected():
    text = MINIMAL.replace("model = zero", "model = linear\nH0 = 0 0 1\nG = 1 0 0  0 1 0  0 0 1")
    with pytest.raises(ScenarioError, match="trace"):
        parse_scenario(text)


def test_asymmetric_gradient_rejected():
    text = MINIMAL.replace("model = zero", "model = linear\nH0 = 0 0 1\nG = 0 1 0  0 0 0  0 0 0")
    with pytest.raises(ScenarioError, match="symmetric"):
        parse_scenario(text)


@pytest.mark.parametrize("name", sorted(os.listdir(SCENARIOS)))
def test_round_trip(name):
    with open(os.path.join(SCENARIOS, name)) as fh:
        sc = parse_scenario(fh.read())
    again = parse_scenario(serialize_scenario(sc))
    assert again == sc
    assert serialize_scenario(again) == serialize_scenario(sc)


def test_round_trip_preserves_floats_exactly():
    sc = parse_scenario(MINIMAL.replace("kind = circular", "kind = circular\nphase = 0.1\nradius = 1.2345678901234567"))
    again = parse_scenario(serialize_scenario(sc))
    assert again.section("initial")["radius"] == 1.2345678901234567
    assert again.section("initial")["phase"] == 0.1


def test_unknown_key_reports_line():
    text = MINIMAL.replace("kind = circular", "kind = circular\nradiuss = 2")
    with pytest.raises(ScenarioError, match=r"line 9: \[initial\] radiuss: unknown key"):
        parse_scenario(text)


def test_unknown_section_rejected():
    with pytest.raises(ScenarioError, match="unknown section"):
        parse_scenario(MINIMAL + "\n[extras]\nfoo = 1\n")


def test_missing_required_key_and_section():
    with pytest.raises(ScenarioError, match="missing required key 'model'"):
        parse_scenario(MINIMAL.replace("model = zero", ""))
    with pytest.raises(ScenarioError, match=r"missing required section \[integrator\]"):
        parse_scenario(MINIMAL.replace("[integrator]\nperiods = 1\n", ""))


def test_bad_value_names_line():
    with pytest.raises(ScenarioError, match=r"line 8: \[initial\] kind"):
        parse_scenario(MINIMAL.replace("kind = circular", "kind = spiral"))
    with pytest.raises(ScenarioError, match="expected 3 numbers"):
        parse_scenario(MINIMAL.replace("kind = circular", "kind = circular\nnormal = 0 1"))


def test_exactly_one_duration():
    with pytest.raises(ScenarioError, match="exactly one"):
        parse_scenario(MINIMAL.replace("periods = 1", "periods = 1\nt_end = 3"))


def test_keys_differing_only_in_case_are_distinct():
    text = MINIMAL.replace("kind = circular", "kind = state\nr = 1 0 0\nrdot = 0 1 0\nR = 5 0 0\nRdot = 0 0 0.5")
    v = parse_scenario(text).section("initial")
    assert v["r"] == (1.0, 0.0, 0.0) and v["R"] == (5.0, 0.0, 0.0)
    assert v["rdot"] == (0.0, 1.0, 0.0) and v["Rdot"] == (0.0, 0.0, 0.5)
    assert parse_scenario(MINIMAL.replace("kind", "KIND")).section("initial")["kind"] == "circular"


def test_overrides():
    sc = parse_scenario(MINIMAL, ["initial.radius=2.5", "field.model=uniform", "field.H0=0 0 3"])
    assert sc.section("initial")["radius"] == 2.5
    assert sc.section("field")["H0"] == (0.0, 0.0, 3.0)
    with pytest.raises(ScenarioError, match="--set initial.bogus"):
        parse_scenario(MINIMAL, ["initial.bogus=1"])
    with pytest.raises(ScenarioError, match="section.key=value"):
        parse_scenario(MINIMAL, ["radius=1"])


def read_csv(path):
    with open(path) as fh:
        header = fh.readline()
        columns = fh.readline().strip().split(",")
    return header, columns, np.loadtxt(path, delimiter=",", skiprows=2, ndmin=2)


def test_simulate_reduced_writes_csv_and_manifest(tmp_path):
    assert run("simulate-reduced", MINIMAL, ["integrator.sample_every=100"], str(tmp_path)) == 0
    header, columns, data = read_csv(tmp_path / "run_reduced.csv")
    assert header.startswith("# ") and "units" in header
    assert columns[:4] == ["t", "R_x", "R_y", "R_z"]
    assert data.shape == (21, len(columns))
    manifest = json.loads((tmp_path / "run_manifest.json").read_text())
    assert manifest["command"] == "simulate-reduced"
    expected = parse_scenario(MINIMAL, ["integrator.sample_every=100", f"output.directory={tmp_path}"])
    assert parse_scenario(manifest["scenario"]) == expected
    assert "run_reduced.csv" in manifest["outputs"]


def test_jsonl_output(tmp_path):
    assert run("simulate-direct", MINIMAL, ["output.format=jsonl", "integrator.sample_every=500"], str(tmp_path)) == 0
    lines = (tmp_path / "run_direct.jsonl").read_text().splitlines()
    assert "units" in json.loads(lines[0])
    assert len(lines) == 1 + 5
    assert set(json.loads(lines[1])) >= {"t", "E", "L_z"}


def test_compare_within_threshold(tmp_path):
    text = MINIMAL.replace("model = zero", "model = uniform\nH0 = 0 0 2").replace("periods = 1", "periods = 2")
    assert run("compare", text, ["integrator.sample_every=50"], str(tmp_path)) == 0
    report = (tmp_path / "run_compare.txt").read_text()
    assert "within_threshold = true" in report


ENSEMBLE = MINIMAL.replace("[initial]\nkind = circular\n", "") + """
[ensemble]
n_atoms = 12
axis = isotropic
jitter = 0.1 0.1 0.1
seed = 5
"""


def test_ensemble_report_is_byte_identical(tmp_path):
    text = ENSEMBLE.replace("model = zero", "model = stern-gerlach\nh = 1\ng = 0.1")
    assert run("ensemble", text, ["integrator.sample_every=200"], str(tmp_path / "a")) == 0
    assert run("ensemble", text, ["integrator.sample_every=200"], str(tmp_path / "b")) == 0
    a = (tmp_path / "a" / "run_ensemble.txt").read_bytes()
    b = (tmp_path / "b" / "run_ensemble.txt").read_bytes()
    assert a == b
    assert (tmp_path / "a" / "run_endpoints.csv").read_bytes() == (tmp_path / "b" / "run_endpoints.csv").read_bytes()


def test_fieldmap_inside_validity_radius_fails_cleanly(tmp_path):
    text = MINIMAL + "\n[probes]\ngrid_min = -3 -3 0\ngrid_max = 3 3 0\ngrid_n = 3 3 1\n"
    assert run("fieldmap", text, [], str(tmp_path)) == 1
    assert not any(p.suffix in (".csv", ".json") for p in tmp_path.iterdir()) if tmp_path.exists() else True


def test_collision_exits_with_runtime_status(tmp_path):
    text = MINIMAL.replace("kind = circular", "kind = state\nr = 1 0 0\nrdot = 0 0 0")
    assert run("simulate-reduced", text, [], str(tmp_path)) == 2
    assert not list(tmp_path.glob("run_*")) if tmp_path.exists() else True


def test_invalid_scenario_exit_status(tmp_path, capsys):
    assert run("simulate-reduced", MINIMAL + "bogus = 1\n", [], str(tmp_path)) == 1
    assert "invalid input" in capsys.readouterr().err


def test_main_reads_file(tmp_path):
    path = tmp_path / "s.ini"
    path.write_text(MINIMAL)
    out = tmp_path / "out"
    assert main(["simulate-reduced", str(path), "--set", "integrator.sample_every=400", "--output-dir", str(out)]) == 0
    assert (out / "run_reduced.csv").exists()
    assert main(["moment", str(tmp_path / "missing.ini")]) == 1


def test_moment_command(tmp_path):
    text = MINIMAL.replace("periods = 1", "periods = 10") + "\n[probes]\nradius = 10\n"
    assert run("moment", text, ["integrator.sample_every=10"], str(tmp_path)) == 0
    lines = dict(
        line.split(" = ", 1) for line in (tmp_path / "run_moment.txt").read_text().splitlines() if " = " in line
    )
    assert abs(float(lines["g_relative_error"])) < 1e-6
