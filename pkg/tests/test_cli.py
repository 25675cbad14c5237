import csv
import json
from pathlib import Path

import pytest

from coop_lane.cli import GRIDS, main, scenario_from_dict, ConfigError
from coop_lane.sim import Scenario

ROOT = Path(__file__).resolve().parents[1]
CONFIGS = ROOT / "configs"


def run(capsys, *argv):
    code = main([str(a) for a in argv])
    out = capsys.readouterr()
    return code, out.out, out.err


# config handling


def test_empty_config_is_default_scenario():
    assert scenario_from_dict({}) == Scenario()
    assert scenario_from_dict(json.loads((CONFIGS / "default.json").read_text())) == Scenario()


def test_unknown_key_rejected():
    with pytest.raises(ConfigError):
        scenario_from_dict({"planner": {"nope": 1}})


def test_planner_horizon_copied_into_flow_window():
    sc = scenario_from_dict({"planner": {"T_max": 12.0}})
    assert sc.planner.flow.T_max == 12.0


def test_grids_match_parameter_table():
    assert [p["planner"]["flow"]["omega"] for p in GRIDS["omega"][0]] == [0.0, 0.25, 0.5, 0.75, 1.0]
    assert [p["planner"]["disruption"]["gamma"] for p in GRIDS["gamma"][0]] == [0.0, 0.25, 0.5, 0.75, 1.0]
    assert len(GRIDS["zeta"][0]) == 4


# solve-c


def test_solve_c_reference_maneuver(capsys, tmp_path):
    code, out, _ = run(capsys, "solve-c", "--out", tmp_path)
    assert code == 0
    fields = dict(line.split(" = ") for line in out.strip().splitlines())
    assert float(fields["v(tf)"].split()[0]) == pytest.approx(29.53, rel=0.02)
    assert (tmp_path / "solve_c.csv").exists()


def test_solve_c_with_oracle(capsys, tmp_path):
    code, out, _ = run(capsys, "solve-c", "--oracle", "--out", tmp_path)
    assert code == 0
    gap = [line for line in out.splitlines() if line.startswith("relative gap")][0]
    assert abs(float(gap.split("=")[1].strip().rstrip("%"))) <= 2.0


def test_solve_c_infeasible(capsys, tmp_path):
    code, out, _ = run(capsys, "solve-c", "--gap", "5", "--out", tmp_path)
    assert code == 2
    assert out.startswith("infeasible")


def test_malformed_arguments(capsys):
    assert run(capsys, "solve-c", "--gap", "abc")[0] == 64
    assert run(capsys, "no-such-command")[0] == 64


# plan


def test_plan_fixture(capsys, tmp_path):
    code, out, _ = run(capsys, "plan", CONFIGS / "snapshot_four.json", "--config",
                       CONFIGS / "plan_fixture.json", "--out", tmp_path)
    assert code == 0
    assert "pair = f0,f1 (slot 0)" in out
    assert "D = 0.1305" in out
    with open(tmp_path / "pairs.csv") as fh:
        rows = list(csv.DictReader(fh))
    assert [r["front"] for r in rows] == ["f0", "f1", "f2", "f3"]
    assert rows[0]["feasible"] == "1"


def test_plan_empty_lane_uses_virtual_slot(capsys, tmp_path):
    code, out, _ = run(capsys, "plan", CONFIGS / "snapshot_empty.json", "--config",
                       CONFIGS / "plan_fixture.json", "--out", tmp_path)
    assert code == 0
    assert "pair = virtual+,virtual-" in out
    assert not (tmp_path / "plan_i.csv").exists()


def test_plan_aborted(capsys, tmp_path):
    cfg = json.loads((CONFIGS / "plan_fixture.json").read_text())
    cfg["planner"]["disruption"] = {"D_th": 0.0}
    path = tmp_path / "strict.json"
    path.write_text(json.dumps(cfg))
    code, out, _ = run(capsys, "plan", CONFIGS / "snapshot_four.json", "--config", path, "--out", tmp_path)
    assert code == 3
    assert "status = Aborted" in out


def test_plan_parse_failure(capsys, tmp_path):
    bad = tmp_path / "bad.json"
    bad.write_text("{not json")
    assert run(capsys, "plan", bad, "--out", tmp_path)[0] == 65
    odd = tmp_path / "odd.json"
    odd.write_text(json.dumps({"c": {"id": "C", "x": 0, "v": 23}, "u": {"id": "U", "x": 50, "v": 16},
                               "trucks": []}))
    assert run(capsys, "plan", odd, "--out", tmp_path)[0] == 65


# simulate and sweep


def test_simulate_is_byte_identical(capsys, tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    assert run(capsys, "simulate", "--config", CONFIGS / "short.json", "--seed", 1, "--out", a)[0] == 0
    assert run(capsys, "simulate", "--config", CONFIGS / "short.json", "--seed", 1, "--out", b)[0] == 0
    for name in ("metrics.json", "trajectories.csv", "events.csv"):
        assert (a / name).read_bytes() == (b / name).read_bytes()
    header = (a / "trajectories.csv").read_text().splitlines()[0]
    assert header == "t,id,lane,x,v,u,phase"


def test_single_point_sweep_matches_simulate(capsys, tmp_path):
    assert run(capsys, "simulate", "--config", CONFIGS / "short.json", "--seed", 4, "--out", tmp_path)[0] == 0
    metrics = json.loads((tmp_path / "metrics.json").read_text())
    code, _, _ = run(capsys, "sweep", "--config", CONFIGS / "short.json", "--grid-file",
                     CONFIGS / "grid_single.json", "--seed", 4, "--workers", 1, "--out", tmp_path)
    assert code == 0
    with open(tmp_path / "sweep.csv") as fh:
        rows = list(csv.DictReader(fh))
    assert len(rows) == 1
    for key in ("throughput", "completed_maneuvers", "safety_violations"):
        assert float(rows[0][key]) == float(metrics[key])


def test_sweep_rows_per_point_and_seed(capsys, tmp_path):
    grid = tmp_path / "grid.json"
    grid.write_text(json.dumps({"points": [{"planner": {"disruption": {"gamma": g}}} for g in (0.0, 1.0)],
                                "runs": 2}))
    code, _, _ = run(capsys, "sweep", "--config", CONFIGS / "short.json", "--grid-file", grid,
                     "--workers", 1, "--out", tmp_path)
    assert code == 0
    with open(tmp_path / "sweep.csv") as fh:
        rows = list(csv.DictReader(fh))
    assert [(r["point"], r["seed"]) for r in rows] == [("0", "1"), ("0", "2"), ("1", "1"), ("1", "2")]
