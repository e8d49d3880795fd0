"""End-to-end command line runs on a small scenario."""

import json
import math
import textwrap

import numpy as np
import pytest

from qmeas.cli import main
from qmeas.outputs import read_csv

TINY = """\
name: tiny
field:
  kind: free_scalar
  sites: 1
  excitation_cap: 2
  mass: 1.0
  length: 6.283185307179586
  initial_occupation: {0: 1}
detectors:
  - name: probe
    gap: 1.0
    coupling: 1.0e-3
smearing:
  sigma: 2.0
  window: 30.0
grids:
  tau: {min: 10.0, max: 20.0, points: 5}
run:
  tasks: [density, zeno, consistency]
  nodes_time: 48
"""

PNG_MAGIC = b"\x89PNG\r\n\x1a\n"


def tiny_scenario(tmp_path, text=TINY):
    path = tmp_path / "tiny.yaml"
    path.write_text(textwrap.dedent(text))
    return str(path)


def test_run_produces_artifacts(tmp_path):
    scn = tiny_scenario(tmp_path)
    out = tmp_path / "out"
    assert main(["run", scn, "--out", str(out)]) == 0

    report = json.loads((out / "report.json").read_text())
    assert report["scenario"] == "tiny"
    assert set(report["tasks"]) == {"density", "zeno", "consistency"}
    assert all(t["status"] == "ok" for t in report["tasks"].values())
    assert report["warnings"] == []

    prov, columns, data = read_csv(out / "density.csv")
    assert columns == ["tau", "density_click"]
    assert data.shape == (5, 2)
    assert np.allclose(data[:, 0], np.linspace(10.0, 20.0, 5))
    assert (data[:, 1] > 0.0).all()
    assert prov["scenario"] == "tiny"

    assert (out / "density.png").read_bytes()[:8] == PNG_MAGIC

    zeno = json.loads((out / "zeno.json").read_text())
    probe = zeno["detectors"]["probe"]
    assert probe["supported_on_initial_sector"] is True
    assert abs(probe["total"] - 1.0) < 1e-8

    cons = json.loads((out / "consistency.json").read_text())
    assert "probe:click" in cons["outcomes"]


def test_repeated_runs_are_byte_identical(tmp_path):
    scn = tiny_scenario(tmp_path)
    out1, out2 = tmp_path / "a", tmp_path / "b"
    assert main(["run", scn, "--out", str(out1)]) == 0
    assert main(["run", scn, "--out", str(out2)]) == 0
    for name in ("density.csv", "density.png", "zeno.json",
                 "consistency.json", "report.json"):
        assert (out1 / name).read_bytes() == (out2 / name).read_bytes(), name


def test_list_names_bundled_scenarios(capsys):
    assert main(["list"]) == 0
    assert capsys.readouterr().out.split() == ["twin-detectors",
                                               "udw-resonance"]


def test_unknown_scenario_exits_2(tmp_path, capsys):
    assert main(["run", "nope", "--out", str(tmp_path / "o")]) == 2
    err = capsys.readouterr().err
    assert err.startswith("error:")
    assert "no bundled scenario" in err


def test_unknown_task_exits_2(tmp_path, capsys):
    scn = tiny_scenario(tmp_path)
    assert main(["run", scn, "--out", str(tmp_path / "o"),
                 "--tasks", "bogus"]) == 2
    assert "unknown task" in capsys.readouterr().err


def test_task_subset_and_sigma_override(tmp_path):
    scn = tiny_scenario(tmp_path)
    out = tmp_path / "o"
    assert main(["run", scn, "--out", str(out), "--tasks", "density",
                 "--sigma", "2.5", "--nodes-time", "32"]) == 0
    report = json.loads((out / "report.json").read_text())
    assert set(report["tasks"]) == {"density"}
    assert report["provenance"]["sigma"] == 2.5
    assert report["provenance"]["nodes_time"] == 32
    assert not (out / "zeno.json").exists()


def test_covariance_task(tmp_path):
    scn = tiny_scenario(tmp_path)
    out = tmp_path / "o"
    assert main(["run", scn, "--out", str(out),
                 "--tasks", "covariance_check"]) == 0
    doc = json.loads((out / "covariance.json").read_text())
    assert len(doc["field_checks"]) == 2
    for check in doc["field_checks"]:
        assert check["applicable"] and check["passed"]
    shift = doc["density_time_shift"]["click"]
    assert shift["applicable"] and shift["passed"]
    assert shift["relative_deviation"] < 1e-10


def test_sweep_emits_convergence_table(tmp_path):
    scn = tiny_scenario(tmp_path)
    out = tmp_path / "o"
    assert main(["sweep", scn, "--out", str(out), "--nodes", "8,16,32"]) == 0
    prov, columns, data = read_csv(out / "convergence.csv")
    assert columns == ["nodes", "value", "error_vs_next"]
    assert list(data[:, 0]) == [8.0, 16.0, 32.0]
    assert math.isnan(data[-1, 2])
    assert np.isfinite(data[:-1, 2]).all()
    assert prov["outcomes"] == "click"
    assert (out / "convergence.png").read_bytes()[:8] == PNG_MAGIC


def test_sweep_needs_two_sizes(tmp_path, capsys):
    scn = tiny_scenario(tmp_path)
    out = tmp_path / "o"
    assert main(["sweep", scn, "--out", str(out), "--nodes", "8"]) == 2
    report = json.loads((out / "report.json").read_text())
    entry = report["tasks"]["convergence_sweep"]
    assert entry["status"] == "error"
    assert "two distinct sizes" in entry["error"]


def test_failed_task_is_reported_not_raised(tmp_path, capsys):
    text = TINY.replace("""detectors:
  - name: probe
    gap: 1.0
    coupling: 1.0e-3
""", """detectors:
  - name: a
    gap: 1.0
    coupling: 1.0e-3
  - name: b
    gap: 1.0
    coupling: 1.0e-3
  - name: c
    gap: 1.0
    coupling: 1.0e-3
""").replace("tasks: [density, zeno, consistency]", "tasks: [density]")
    scn = tiny_scenario(tmp_path, text)
    out = tmp_path / "o"
    assert main(["run", scn, "--out", str(out)]) == 2
    report = json.loads((out / "report.json").read_text())
    assert report["tasks"]["density"]["status"] == "error"
    assert "pair of detectors" in report["tasks"]["density"]["error"]
    assert "density: error:" in capsys.readouterr().out


def test_validate_bundled_scenario(tmp_path, capsys):
    json_path = tmp_path / "checks.json"
    assert main(["validate", "twin-detectors", "--json", str(json_path)]) == 0
    lines = capsys.readouterr().out.splitlines()
    assert all(line.startswith("PASS") for line in lines)
    assert {ln.split()[1] for ln in lines} >= {
        "left:stationarity:", "right:site_snap:"}
    doc = json.loads(json_path.read_text())
    assert doc["passed"] is True
    assert len(doc["checks"]) == 10
