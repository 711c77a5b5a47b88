import json
import subprocess
import sys
import textwrap

import pytest

from setflow.cli import DESCRIPTIONS, describe, main
from setflow.harness import TheoremId
from setflow.scenarios import (ParseError, ResolutionError, bundled_scenarios, load_scenario,
                               parse_scenario, resolve)

GRID = """\
grid:
  lower_box_units: [-1.0, -1.0]
  upper_box_units: [1.0, 1.0]
  spacing_box_units: 0.0625
"""


def write(tmp_path, body, name="s.yaml"):
    p = tmp_path / name
    p.write_text(textwrap.dedent(body))
    return p


def read_report(path):
    lines = path.read_text().splitlines()
    records = [json.loads(l) for l in lines if not l.startswith("@timing ")]
    timing = [json.loads(l[len("@timing "):]) for l in lines if l.startswith("@timing ")]
    return records, timing


# --- list and describe -----------------------------------------------------------


def test_list_shows_the_bundled_scenarios(capsys):
    assert main(["list"]) == 0
    out = capsys.readouterr().out.splitlines()
    assert len(out) >= 12 and len(bundled_scenarios()) >= 12
    assert any(line.startswith("circle-extinction") for line in out)


def test_every_bundled_scenario_resolves():
    for name, path in bundled_scenarios().items():
        res = resolve(load_scenario(path))
        assert res.scenario.name == name and res.scenario.checks


@pytest.mark.parametrize("tid", list(TheoremId))
def test_describe_every_id(tid, capsys):
    assert tid in DESCRIPTIONS
    assert main(["describe", tid.value]) == 0
    text = capsys.readouterr().out
    assert text.strip() and "tolerance" in text.lower()


def test_describe_unknown_id(capsys):
    assert main(["describe", "NoSuchTheorem"]) == 3
    assert "NoSuchTheorem" in capsys.readouterr().err
    with pytest.raises(ResolutionError):
        describe("NoSuchTheorem")


# --- parse and resolution errors -------------------------------------------------


def test_syntax_error_reports_position_and_writes_nothing(tmp_path, capsys, monkeypatch):
    monkeypatch.chdir(tmp_path)
    p = write(tmp_path, "name: bad\ngrid:\n  lower_box_units: [-1, -1\n")
    assert main(["run", str(p), "--report", str(tmp_path / "r.jsonl")]) == 2
    assert "line 4" in capsys.readouterr().err
    assert list(tmp_path.iterdir()) == [p]


@pytest.mark.parametrize("body, fragment", [
    ("sets:\n  a: {shape: ball, center_box_units: [0, 0], radius: 0.5}\n", "radius_box_units"),
    ("flow:\n  max_time: 0.1\n", "max_time_flow_units"),
    ("sets:\n  a: {shape: ball, center_box_units: [0, 0], radius_box_units: 0.5, colour: red}\n", "colour"),
    ("name: twice\n", "duplicate"),
])
def test_parse_errors(tmp_path, body, fragment):
    text = "name: s\n" + GRID + body + "checks: []\n"
    with pytest.raises(ParseError) as err:
        parse_scenario(text, "s.yaml")
    assert fragment in str(err.value) and "line" in str(err.value)
    assert err.value.exit_code == 2


@pytest.mark.parametrize("body, fragment", [
    ("checks:\n  - {id: Semigroup, label: x, set: ghost, s_flow_units: 0.01, t_flow_units: 0.01}\n", "ghost"),
    ("checks:\n  - {id: Teleport, label: x}\n", "Teleport"),
    ("sets:\n  a: {shape: blob}\nchecks:\n  - {id: Compactness, label: x}\n", "blob"),
])
def test_resolution_errors_exit_3(tmp_path, capsys, body, fragment):
    p = write(tmp_path, "name: s\n" + GRID + body)
    report = tmp_path / "r.jsonl"
    assert main(["run", str(p), "--report", str(report)]) == 3
    assert fragment in capsys.readouterr().err
    assert not report.exists()


def test_grid_cap_is_a_resolution_error(tmp_path):
    p = write(tmp_path, "name: s\n" + GRID + "checks:\n  - {id: Compactness, label: x}\n")
    with pytest.raises(ResolutionError, match="nodes"):
        resolve(load_scenario(p), grid_override=4096)


# --- runs ------------------------------------------------------------------------


AVOID = """\
name: overlap
sets:
  a: {shape: ball, center_box_units: [-0.1, 0.0], radius_box_units: 0.3}
  b: {shape: ball, center_box_units: [0.1, 0.0], radius_box_units: 0.3}
  c: {shape: ball, center_box_units: [0.0, 0.0], radius_box_units: 0.4}
flow:
  max_time_flow_units: 0.02
  cfl: 0.5
checks:
  - {id: Avoidance, label: overlapping, sets: [a, b]}
  - {id: Extinction, label: early, set: c, expected_flow_units: 0.08, tolerance_flow_units: 0.01}
"""


def test_precondition_failure_exits_4_and_still_reports(tmp_path, capsys):
    p = write(tmp_path, AVOID.replace("flow:", GRID + "flow:"))
    report = tmp_path / "r.jsonl"
    assert main(["run", str(p), "--report", str(report)]) == 4
    records, timing = read_report(report)
    assert records[0]["record"] == "scenario"
    assert records[1]["check"] == "overlapping" and "PreconditionError" in records[1]["error"]
    assert records[2]["check"] == "early" and records[2]["passed"] is False
    assert [t["check"] for t in timing] == ["overlapping", "early"]
    assert "error in overlapping" in capsys.readouterr().err


def test_failed_check_exits_1(tmp_path):
    body = AVOID.replace("flow:", GRID + "flow:").replace(
        "  - {id: Avoidance, label: overlapping, sets: [a, b]}\n", "")
    assert main(["run", str(write(tmp_path, body)), "--report", str(tmp_path / "r.jsonl")]) == 1


def test_bundled_run_is_deterministic(tmp_path, capsys):
    a, b = tmp_path / "a.jsonl", tmp_path / "b.jsonl"
    assert main(["run", "compactness", "--report", str(a)]) == 0
    assert main(["run", "compactness", "--report", str(b)]) == 0
    strip = lambda p: [l for l in p.read_text().splitlines() if not l.startswith("@timing")]
    assert strip(a) == strip(b)
    records, _ = read_report(a)
    assert records[0]["grid"]["spacing"] == 0.03125
    assert {"chi", "jacobian_bound", "lambda"} <= set(records[0]["fields"]["rotate"])
    out = capsys.readouterr().out
    assert "library" in out and "Compactness" in out


def test_overrides_dumps_and_tracks(tmp_path):
    body = "name: small\n" + GRID + textwrap.dedent("""\
        sets:
          disk: {shape: ball, center_box_units: [0.0, 0.0], radius_box_units: 0.5}
        flow:
          max_time_flow_units: 0.01
          sample_dt_flow_units: 0.005
          cfl: 0.5
        checks:
          - {id: Semigroup, label: split, set: disk, s_flow_units: 0.005, t_flow_units: 0.005}
        """)
    p = write(tmp_path, body)
    report = tmp_path / "out" / "r.jsonl"
    code = main(["run", str(p), "--report", str(report), "--grid-override", "32",
                 "--dump-every", "4", "--seed", "7"])
    assert code == 0
    records, timing = read_report(report)
    assert records[0]["grid"]["spacing"] == 1 / 32 and records[0]["seed"] == 7
    assert timing[0]["flows"] == 3
    dumps = sorted((tmp_path / "out" / "r.dumps" / "check_00").iterdir())
    assert [d.name for d in dumps] == ["flow_000", "flow_001", "flow_002"]
    assert any(dumps[0].iterdir())
    csvs = sorted((tmp_path / "out" / "r.tracks").glob("*.csv"))
    assert [c.name for c in csvs] == [f"check_00_flow_{k:02d}.csv" for k in range(3)]
    assert csvs[0].read_text().startswith("time,volume,interface_measure")


def test_console_script_entry_point(tmp_path):
    out = subprocess.run([sys.executable, "-m", "setflow.cli", "describe", "Semigroup"],
                         capture_output=True, text=True, cwd=tmp_path)
    assert out.returncode == 0 and out.stdout.strip()
