import csv
import json
import math
import subprocess
import sys

import pytest

from conftest import EX7, EX12
from tdsparam import __version__
from tdsparam.cli import main

EX7_SYS = {"text": EX7, "params": ["t1", "t2"]}
EX12_SYS = {"text": EX12, "params": ["tau", "k"]}
NEUTRAL = {"m": 1, "params": ["t"],
           "terms": [{"power": 1, "coeff": 0.5, "delay": "t"}, {"power": 0, "coeff": 1}]}


def run(tmp_path, command, cfg, name="cfg.json"):
    path = tmp_path / name
    path.write_text(json.dumps(cfg) if not isinstance(cfg, str) else cfg, encoding="utf-8")
    out = tmp_path / f"out_{command}"
    return main([command, "--config", str(path), "--out", str(out)]), out


def load(path):
    return json.loads(path.read_text(encoding="utf-8"))


def read_csv(path):
    with open(path, newline="", encoding="utf-8") as fh:
        return list(csv.reader(fh))


def test_check_example7_passes(tmp_path):
    code, out = run(tmp_path, "check", {"system": EX7_SYS})
    assert code == 0
    data = load(out / "check.json")
    assert data["verdict"] == "PASS" and data["issues"] == []


def test_check_neutral_warns(tmp_path):
    code, out = run(tmp_path, "check", {"system": NEUTRAL})
    assert code == 2
    assert load(out / "check.json")["verdict"] == "WARN"


def test_check_accepts_plain_text_system(tmp_path):
    code, _ = run(tmp_path, "check", {"system": EX7})
    assert code == 0


def test_malformed_json_reports_offset(tmp_path, capsys):
    code, _ = run(tmp_path, "check", '{"system": ')
    assert code == 1
    err = capsys.readouterr().err
    assert "offset 11" in err and "line 1" in err


def test_schema_error(tmp_path, capsys):
    code, _ = run(tmp_path, "check", {"system": EX7_SYS, "bogus": 1})
    assert code == 1
    assert "schema" in capsys.readouterr().err


def test_system_file_relative_to_config(tmp_path):
    (tmp_path / "sys.json").write_text(json.dumps(EX7_SYS), encoding="utf-8")
    code, _ = run(tmp_path, "check", {"system_file": "sys.json"})
    assert code == 0


def test_ray_example7(tmp_path):
    code, out = run(tmp_path, "ray", {"system": EX7_SYS, "start": [0, 0], "direction": [1, 0]})
    assert code == 0
    data = load(out / "ray.json")
    res = data["result"]
    assert res["verdict"] == "CONVERGED"
    assert abs(res["theta_lim"] - 0.6506) < 5e-3
    assert res["endpoint_min_abs_f"] < 1e-2 * res["endpoint_scale"]
    assert data["config"]["eta"] == 0.5 and data["config"]["delta"] == 1e-4
    rows = read_csv(out / "ray.csv")
    assert rows[0] == ["k", "theta", "delta", "omega_min", "min_abs_f"]
    assert len(rows) - 1 == res["steps"]


def test_ray_example12_diverges(tmp_path):
    cfg = {"system": EX12_SYS, "start": [5, 5], "direction": [1, 1], "theta_max": 20}
    code, out = run(tmp_path, "ray", cfg)
    assert code == 3
    assert load(out / "ray.json")["result"]["verdict"] == "DIVERGED"


def test_ray_from_crossing_fails(tmp_path):
    cfg = {"system": {"text": "s + exp(-s*t)"}, "start": [math.pi / 2], "direction": [1]}
    code, out = run(tmp_path, "ray", cfg)
    assert code == 4
    res = load(out / "ray.json")["result"]
    assert res["verdict"] == "FAILED" and res["reason"]


def test_ray_needs_direction(tmp_path, capsys):
    code, _ = run(tmp_path, "ray", {"system": EX7_SYS, "start": [0, 0]})
    assert code == 1
    assert "direction" in capsys.readouterr().err


def test_ray_invalid_start(tmp_path):
    code, _ = run(tmp_path, "ray", {"system": EX7_SYS, "start": [0, 0, 0], "direction": [1, 0]})
    assert code == 1


def test_fan_uniform_example7(tmp_path):
    cfg = {"system": EX7_SYS, "start": [0.1, 0.1], "fan": 16, "theta_max": 20}
    code, out = run(tmp_path, "fan", cfg)
    data = load(out / "fan.json")
    assert len(data["rays"]) == 16
    assert code == (4 if any(r["verdict"] == "FAILED" for r in data["rays"]) else 0)
    for r in data["rays"]:
        assert (out / r["csv"]).exists()
    assert (out / "fan.gp").exists()


def test_fan_empty_directions(tmp_path):
    code, _ = run(tmp_path, "fan", {"system": EX7_SYS, "start": [0, 0], "directions": []})
    assert code == 1


def test_fan_needs_directions_beyond_two_parameters(tmp_path, capsys):
    sysd = {"text": "s + 0.2*exp(-s*a) + 0.2*exp(-s*b) + 0.2*exp(-s*c)"}
    code, _ = run(tmp_path, "fan", {"system": sysd, "start": [0, 0, 0]})
    assert code == 1
    assert "directions" in capsys.readouterr().err


def test_region_example7(tmp_path):
    cfg = {"system": EX7_SYS, "start": [0.1, 0.5], "max_generations": 3}
    code, out = run(tmp_path, "region", cfg)
    assert code == 0
    data = load(out / "region.json")
    assert data["nu"] == 0 and len(data["balls"]) >= 1
    assert data["config"]["p"] == 2 and data["config"]["h"] > 0
    assert read_csv(out / "region_balls.csv")[0] == ["c_t1", "c_t2", "radius"]
    assert read_csv(out / "region_polygon.csv")[0] == ["t1", "t2"]
    assert "plot" in (out / "region.gp").read_text()


def test_region_box_norm(tmp_path):
    cfg = {"system": EX7_SYS, "start": [0.1, 0.5], "max_generations": 1, "q": "inf"}
    code, out = run(tmp_path, "region", cfg)
    assert code == 0
    data = load(out / "region.json")
    assert data["config"]["p"] == 1 and data["config"]["q"] == "inf"
    assert data["balls"][0]["q"] == "inf"


def test_region_example12_flags_unbounded(tmp_path):
    cfg = {"system": EX12_SYS, "start": [5, 5], "extent": [[4, 4], [7, 7]], "h": 1.0}
    code, out = run(tmp_path, "region", cfg)
    assert code == 0
    data = load(out / "region.json")
    assert data["unbounded"]
    assert {"+tau", "+k"} <= set(data["capped_faces"])


def test_region_dimension_cap(tmp_path, capsys):
    sysd = {"text": "s + 0.1*exp(-s*a) + 0.1*exp(-s*b) + 0.1*exp(-s*c) + 0.1*exp(-s*d)"}
    code, _ = run(tmp_path, "region", {"system": sysd, "start": [0, 0, 0, 0]})
    assert code == 1
    assert "at most 3" in capsys.readouterr().err


def test_region_non_conjugate_norms(tmp_path):
    code, _ = run(tmp_path, "region", {"system": EX7_SYS, "start": [0, 0], "p": 2, "q": 3})
    assert code == 1


def test_count(tmp_path):
    cfg = {"system": {"text": "s + 2*exp(-s*t)"}, "start": [1.0]}
    code, out = run(tmp_path, "count", cfg)
    assert code == 0
    assert load(out / "count.json")["nu"] == 2


def test_count_on_crossing(tmp_path):
    cfg = {"system": {"text": "s + exp(-s*t)"}, "start": [math.pi / 2]}
    code, _ = run(tmp_path, "count", cfg)
    assert code == 4


def test_convert_unit_kernel(tmp_path):
    model = {"params": ["tau"], "A0": 0,
             "distributed": [{"A": -1, "lower": 0, "upper": "tau", "kernel": [1]}]}
    code, out = run(tmp_path, "convert", {"model": model})
    assert code == 0
    data = load(out / "convert.json")
    assert data["clearing_power"] == 1
    sysd = load(out / "system.json")
    got = {(t["power"], t["coeff"], t["delay"]) for t in sysd["terms"]}
    assert got == {(0, "1", "0"), (0, "-1", "tau")} and sysd["m"] == 2


def test_convert_discrete_only(tmp_path):
    model = {"params": ["tau"], "A0": 0, "discrete": [{"A": -1, "delay": "tau"}]}
    code, out = run(tmp_path, "convert", {"model": model})
    assert code == 0
    sysd = load(out / "system.json")
    assert sysd["m"] == 1
    assert [(t["power"], t["coeff"], t["delay"]) for t in sysd["terms"]] == [(0, "1", "tau")]


def test_convert_bad_limits(tmp_path):
    model = {"A0": 0, "distributed": [{"A": -1, "lower": 2, "upper": 1}]}
    code, _ = run(tmp_path, "convert", {"model": model})
    assert code == 1


def test_convert_needs_model(tmp_path):
    code, _ = run(tmp_path, "convert", {"system": EX7_SYS})
    assert code == 1


def test_console_script_version():
    res = subprocess.run([sys.executable, "-m", "tdsparam.cli", "--version"],
                         capture_output=True, text=True, check=False)
    assert res.returncode == 0
    assert __version__ in res.stdout


@pytest.mark.parametrize("argv", [[], ["nope", "--config", "x"], ["check"]])
def test_usage_errors(argv):
    with pytest.raises(SystemExit) as info:
        main(argv)
    assert info.value.code == 1
