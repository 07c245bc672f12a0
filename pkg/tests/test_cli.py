import json
import os

import pytest
from click.testing import CliRunner

import cli
from cli import main
from errors import SimulationError
from utils import read_csv

SCENARIO_DIR = os.path.join(os.path.dirname(os.path.dirname(os.path.abspath(__file__))), "scenarios")

STAR_AVERAGE = """\
schema_version: 1
name: star-average
application: average
seed: 3
generations: 4
length: 2
topology:
  generator:
    kind: star
    n_sources: 3
"""

STAR_FORWARDING = STAR_AVERAGE.replace("application: average", "application: forwarding")

CYCLE = """\
schema_version: 1
topology:
  nodes:
    s0: source
    a0: atomic
    a1: atomic
    d: destination
  arcs:
    - [s0, a0]
    - [a0, a1]
    - [a1, a0]
    - [a1, d]
"""

IDENTITY_CAPACITY = """\
schema_version: 1
topology:
  generator:
    kind: star
    n_sources: 2
field:
  m: 1
capacity:
  target: identity
  sweep:
    - [1, 1]
    - [1, 2]
"""


MISSING_FUNCTION = """\
schema_version: 1
application: function
topology:
  nodes:
    s0: source
    s1: source
    s2: source
    s3: source
    a0: atomic
    a1: atomic
    d: destination
  arcs:
    - [s0, a0]
    - [s1, a0]
    - [s2, a1]
    - [s3, a1]
    - [a0, d]
    - [a1, d]
functions:
  nodes:
    a0:
      kind: sum
    d:
      kind: sum
"""


@pytest.fixture
def runner():
    return CliRunner(mix_stderr=False)


def _write(tmp_path, name, text):
    path = tmp_path / name
    path.write_text(text, encoding="utf-8")
    return str(path)


def test_validate_accepts_scenario(runner, tmp_path):
    result = runner.invoke(main, ["validate", _write(tmp_path, "ok.yaml", STAR_AVERAGE)])
    assert result.exit_code == 0
    assert "valid" in result.output


def test_validate_names_the_cycle(runner, tmp_path):
    path = _write(tmp_path, "cycle.yaml", CYCLE)
    result = runner.invoke(main, ["validate", path])
    assert result.exit_code == 2
    assert "CycleDetected" in result.stderr
    assert "a0 -> a1" in result.stderr or "a1 -> a0" in result.stderr
    assert f"{path}:" in result.stderr


def test_validate_reports_unknown_key_with_line(runner, tmp_path):
    path = _write(tmp_path, "typo.yaml", STAR_AVERAGE + "generatoins: 3\n")
    result = runner.invoke(main, ["validate", path])
    assert result.exit_code == 2
    assert f"{path}:11" in result.stderr


def test_validate_missing_file(runner, tmp_path):
    result = runner.invoke(main, ["validate", str(tmp_path / "absent.yaml")])
    assert result.exit_code == 3


def test_validate_installs_node_functions(runner, tmp_path):
    path = _write(tmp_path, "f.yaml", MISSING_FUNCTION)
    result = runner.invoke(main, ["validate", path])
    assert result.exit_code == 2
    assert "'a1'" in result.stderr
    assert f"{path}:" in result.stderr


def test_validate_rejects_average_on_dag(runner, tmp_path):
    text = CYCLE.replace("    - [a1, a0]\n", "").replace("topology:\n", "application: average\ntopology:\n  mode: dag\n")
    result = runner.invoke(main, ["validate", _write(tmp_path, "dag.yaml", text)])
    assert result.exit_code == 2
    assert "tree" in result.stderr


def test_run_rejects_missing_function_before_running(runner, tmp_path):
    out = tmp_path / "out"
    result = runner.invoke(main, ["run", _write(tmp_path, "f.yaml", MISSING_FUNCTION), "--out", str(out)])
    assert result.exit_code == 2
    assert not out.exists()


@pytest.mark.parametrize("error", [SimulationError("barrier broke"), ValueError("barrier broke")])
def test_failure_while_running_exits_four(runner, tmp_path, monkeypatch, error):
    def broken(_scenario):
        raise error

    monkeypatch.setattr(cli, "run_scenario", broken)
    out = tmp_path / "out"
    result = runner.invoke(main, ["run", _write(tmp_path, "s.yaml", STAR_AVERAGE), "--out", str(out)])
    assert result.exit_code == 4
    assert "barrier broke" in result.stderr
    assert not out.exists()


def test_compare_failure_while_running_exits_four(runner, tmp_path, monkeypatch):
    def broken(_scenario):
        raise SimulationError("barrier broke")

    monkeypatch.setattr(cli, "run_scenario", broken)
    nfc = _write(tmp_path, "avg.yaml", STAR_AVERAGE)
    fwd = _write(tmp_path, "fwd.yaml", STAR_FORWARDING)
    result = runner.invoke(main, ["compare", nfc, fwd])
    assert result.exit_code == 4


def test_run_writes_tables_and_manifest(runner, tmp_path):
    out = tmp_path / "out"
    result = runner.invoke(main, ["run", _write(tmp_path, "s.yaml", STAR_AVERAGE), "--out", str(out)])
    assert result.exit_code == 0, result.stderr
    assert {"arc_symbols.csv", "trajectory.csv", "outputs.csv", "manifest.json"} <= set(os.listdir(out))
    with open(out / "manifest.json", encoding="utf-8") as handle:
        manifest = json.load(handle)
    assert manifest["seed"] == 3
    # four arcs, four generations, two payload symbols plus the count
    assert manifest["results"]["total_symbols"] == 4 * 4 * 3


def test_run_twice_gives_identical_files(runner, tmp_path):
    path = _write(tmp_path, "s.yaml", STAR_AVERAGE)
    for name in ("a", "b"):
        assert runner.invoke(main, ["run", path, "--out", str(tmp_path / name)]).exit_code == 0
    for name in ("arc_symbols.csv", "trajectory.csv", "outputs.csv", "manifest.json"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()


def test_seed_override_is_recorded(runner, tmp_path):
    out = tmp_path / "out"
    result = runner.invoke(main, ["run", _write(tmp_path, "s.yaml", STAR_AVERAGE), "--seed", "99", "--out", str(out)])
    assert result.exit_code == 0
    with open(out / "manifest.json", encoding="utf-8") as handle:
        manifest = json.load(handle)
    assert manifest["seed"] == 99
    assert manifest["scenario"]["seed"] == 99


def test_manifest_replay_reproduces_run(runner, tmp_path):
    first = tmp_path / "first"
    assert runner.invoke(main, ["run", _write(tmp_path, "s.yaml", STAR_AVERAGE), "--out", str(first)]).exit_code == 0
    replay = tmp_path / "replay"
    result = runner.invoke(main, ["run", str(first / "manifest.json"), "--out", str(replay)])
    assert result.exit_code == 0, result.stderr
    for name in ("arc_symbols.csv", "outputs.csv"):
        assert (first / name).read_bytes() == (replay / name).read_bytes()


def test_run_invalid_scenario_exits_two(runner, tmp_path):
    result = runner.invoke(main, ["run", _write(tmp_path, "cycle.yaml", CYCLE), "--out", str(tmp_path / "out")])
    assert result.exit_code == 2
    assert not (tmp_path / "out").exists()


def test_trials_needs_rlnc_section(runner, tmp_path):
    result = runner.invoke(main, ["run", _write(tmp_path, "s.yaml", STAR_AVERAGE), "--trials", "10"])
    assert result.exit_code == 2


def test_batch_directory(runner, tmp_path):
    scenarios = tmp_path / "scenarios"
    scenarios.mkdir()
    _write(scenarios, "avg.yaml", STAR_AVERAGE)
    _write(scenarios, "fwd.yml", STAR_FORWARDING)
    _write(scenarios, "notes.txt", "ignored")
    out = tmp_path / "out"
    result = runner.invoke(main, ["run", str(scenarios), "--out", str(out), "--workers", "2"])
    assert result.exit_code == 0, result.stderr
    assert sorted(os.listdir(out)) == ["avg", "fwd"]
    assert len(result.output.strip().splitlines()) == 2


def test_batch_exit_code_is_the_worst(runner, tmp_path):
    scenarios = tmp_path / "scenarios"
    scenarios.mkdir()
    _write(scenarios, "avg.yaml", STAR_AVERAGE)
    _write(scenarios, "cycle.yaml", CYCLE)
    result = runner.invoke(main, ["run", str(scenarios), "--out", str(tmp_path / "out")])
    assert result.exit_code == 2
    assert os.path.isdir(tmp_path / "out" / "avg")


def test_empty_batch_directory(runner, tmp_path):
    result = runner.invoke(main, ["run", str(tmp_path)])
    assert result.exit_code == 3


def test_capacity_identity(runner, tmp_path):
    out = tmp_path / "report"
    result = runner.invoke(main, ["capacity", _write(tmp_path, "c.yaml", IDENTITY_CAPACITY), "--out", str(out)])
    assert result.exit_code == 0, result.stderr
    assert "not solvable (cut 1 < N=2)" in result.output
    assert "capacity lower bound: 1/2 (K=1, L=2)" in result.output
    with open(out / "capacity_report.json", encoding="utf-8") as handle:
        body = json.load(handle)
    assert body["best"]["ratio"] == "1/2"


def test_capacity_xor_has_witness(runner, tmp_path):
    text = IDENTITY_CAPACITY.replace("target: identity", "target: xor")
    result = runner.invoke(main, ["capacity", _write(tmp_path, "c.yaml", text)])
    assert result.exit_code == 0
    assert "solvable, witness attached" in result.output


def test_capacity_over_cap_exits_five(runner, tmp_path):
    text = IDENTITY_CAPACITY.replace("    - [1, 2]\n", "    - [2, 2]\n")
    result = runner.invoke(main, ["capacity", _write(tmp_path, "c.yaml", text)])
    assert result.exit_code == 5
    assert "exceeded the search cap" in result.stderr


def test_capacity_needs_section(runner, tmp_path):
    result = runner.invoke(main, ["capacity", _write(tmp_path, "s.yaml", STAR_AVERAGE)])
    assert result.exit_code == 2


def test_compare_writes_breakdown(runner, tmp_path):
    nfc = _write(tmp_path, "avg.yaml", STAR_AVERAGE)
    fwd = _write(tmp_path, "fwd.yaml", STAR_FORWARDING)
    out = tmp_path / "cmp"
    result = runner.invoke(main, ["compare", nfc, fwd, "--out", str(out)])
    assert result.exit_code == 0, result.stderr
    # forwarding sends 2 symbols on each source arc and 6 on the relay arc, the average 3 on every arc
    assert "forwarding=48 nfc=48 ratio=1" in result.output
    rows = read_csv(str(out / "cost_breakdown.csv"))
    assert len(rows) == 4


def test_compare_rejects_non_forwarding_baseline(runner, tmp_path):
    nfc = _write(tmp_path, "avg.yaml", STAR_AVERAGE)
    result = runner.invoke(main, ["compare", nfc, nfc])
    assert result.exit_code == 2


def test_version(runner):
    result = runner.invoke(main, ["--version"])
    assert result.exit_code == 0


@pytest.mark.parametrize("name", sorted(f for f in os.listdir(SCENARIO_DIR) if f.endswith(".yaml")))
def test_bundled_scenarios_validate(runner, name):
    result = runner.invoke(main, ["validate", os.path.join(SCENARIO_DIR, name)])
    assert result.exit_code == 0, result.stderr
