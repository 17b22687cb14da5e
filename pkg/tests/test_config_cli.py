import json
import math
import os
import subprocess
import sys

import numpy as np
import pytest

from sgsde.cli import main
from sgsde.config import evaluate_number, parse_config, preset_text
from sgsde.errors import ConfigurationError, GridError, LipschitzError


def _doc(**over):
    doc = json.loads(preset_text("5.2"))
    doc.pop("reference")
    doc["grid"] = {"dt": 0.01, "t_past": 40, "t_fwd": 5}
    for k, v in over.items():
        doc[k] = v
    return doc


def _write(tmp_path, doc, name="cfg.json"):
    p = tmp_path / name
    p.write_text(json.dumps(doc))
    return str(p)


def _strip_time(obj):
    if isinstance(obj, dict):
        return {k: _strip_time(v) for k, v in obj.items() if k != "generated_at"}
    if isinstance(obj, list):
        return [_strip_time(v) for v in obj]
    return obj


# config parsing


def test_parse_preset_52(presets):
    cfg = presets["5.2"]
    assert np.array_equal(cfg.spec.A, np.diag([-1.0, -2.0, -3.0]))
    assert cfg.spec.h.wiring == ((2,), (0,), (1,))
    assert cfg.spec.L == 1 / 16 and cfg.seed == 7


def test_cube_root_entries_full_precision(presets):
    A = presets["5.3"].spec.A
    assert A[0, 1] == A[1, 2] == A[2, 0] == 2 ** (1 / 3)


def test_empty_document_lists_required():
    with pytest.raises(ConfigurationError) as info:
        parse_config("{}")
    messages = " ".join(e["message"] for e in info.value.details["errors"])
    assert "'system'" in messages and "'grid'" in messages


def test_dt_not_dividing_t_past():
    with pytest.raises(GridError) as info:
        parse_config(json.dumps(_doc(grid={"dt": 0.03, "t_past": 1.0})))
    assert "grid.dt" in str(info.value) and info.value.details["field"] == "/grid/dt"


@pytest.mark.parametrize("where", ["top", "system", "h"])
def test_unknown_keys_rejected(where):
    doc = _doc()
    target = {"top": doc, "system": doc["system"], "h": doc["system"]["h"]}[where]
    target["bogus"] = 1
    with pytest.raises(ConfigurationError) as info:
        parse_config(json.dumps(doc))
    assert "bogus" in str(info.value)


def test_schema_error_pointer():
    doc = _doc()
    doc["stationary"]["n_samples"] = "many"
    with pytest.raises(ConfigurationError) as info:
        parse_config(json.dumps(doc))
    assert info.value.details["field"] == "/stationary/n_samples"


def test_malformed_json():
    with pytest.raises(ConfigurationError):
        parse_config("{not json")


def test_missing_output_parent(tmp_path):
    with pytest.raises(ConfigurationError):
        parse_config(json.dumps(_doc(output={"dir": str(tmp_path / "a" / "b")})))


def test_vector_length_checked():
    with pytest.raises(ConfigurationError):
        parse_config(json.dumps(_doc(simulate={"x0": [0, 0]})))


def test_declared_L_too_small_rejected():
    doc = _doc()
    doc["system"]["L"] = 0.01
    with pytest.raises(LipschitzError):
        parse_config(json.dumps(doc))


@pytest.mark.parametrize("text,value", [
    ("2^(1/3)", 2 ** (1 / 3)), ("1/36", 1 / 36), ("-2+sqrt(2)", -2 + math.sqrt(2)),
    ("9/(16*(2-sqrt(2)))", 9 / (16 * (2 - math.sqrt(2)))), ("pi/2", math.pi / 2), (3, 3.0),
])
def test_evaluate_number(text, value):
    assert evaluate_number(text) == value


@pytest.mark.parametrize("text", ["__import__('os')", "x", "1/0", "abs(1)", "1e400*1e400", True])
def test_evaluate_number_rejects(text):
    with pytest.raises(ConfigurationError):
        evaluate_number(text)


# command line


def test_check_53(tmp_path, capsys):
    cfg = tmp_path / "c.json"
    doc = json.loads(preset_text("5.3"))
    doc.pop("reference")
    cfg.write_text(json.dumps(doc))
    assert main(["check", "--config", str(cfg), "--out", str(tmp_path / "chk")]) == 0
    out = json.loads(capsys.readouterr().out)
    assert out["gain"] == pytest.approx(9 / (16 * (2 - math.sqrt(2))), rel=1e-12)
    assert round(out["gain"], 6) == 0.960248 and out["smallGainOk"]
    report = json.loads((tmp_path / "chk" / "report.json").read_text())
    assert "generated_at" in report["meta"]


def test_example_61(tmp_path, capsys):
    assert main(["example", "6.1", "--out", str(tmp_path), "--threads", "1"]) == 0
    out = json.loads((tmp_path / "example.json").read_text())
    assert out["drift"]["ok"] and "skipped" in out["note"]
    assert "equilibrium" not in out and out["ok"]
    assert out["comparison"]["cooperative"]["computed"] is False


def test_equilibrium_inflated_L_exits_1(tmp_path, capsys):
    doc = _doc()
    doc["system"]["L"] = 0.5
    code = main(["equilibrium", "--config", _write(tmp_path, doc), "--out", str(tmp_path)])
    err = json.loads(capsys.readouterr().err)
    assert code == 1 and err["error"] == "SmallGainError" and err["reason"]


def test_nonconvergence_exits_2(tmp_path, capsys):
    doc = _doc(equilibrium={"tol": 1e-12, "max_iter": 2})
    code = main(["equilibrium", "--config", _write(tmp_path, doc), "--out", str(tmp_path)])
    err = json.loads(capsys.readouterr().err)
    assert code == 2 and err["error"] == "ConvergenceError" and len(err["residuals"]) == 2


def test_usage_errors(tmp_path, capsys):
    assert main(["example"]) == 1
    assert main(["check"]) == 1
    assert main(["example", "9.9"]) == 1
    assert main(["check", "--config", str(tmp_path / "missing.json")]) == 1
    for line in capsys.readouterr().err.strip().splitlines():
        assert "error" in json.loads(line)


def test_simulate_and_pullback(tmp_path, capsys):
    doc = _doc(simulate={"x0": [1, 0, 0], "t1": 2}, pullback={"t_max": 5, "stride": 50})
    cfg = _write(tmp_path, doc)
    assert main(["simulate", "--config", cfg, "--out", str(tmp_path)]) == 0
    assert main(["pullback", "--config", cfg, "--out", str(tmp_path)]) == 0
    rows = (tmp_path / "trajectory.csv").read_text().splitlines()
    assert rows[0] == "t,x_1,x_2,x_3" and len(rows) == 202
    assert len((tmp_path / "pullback.csv").read_text().splitlines()) == 12


def test_equilibrium_artifacts(tmp_path, capsys):
    doc = _doc(equilibrium={"verify_t0": 0, "verify_t1": 5})
    assert main(["equilibrium", "--config", _write(tmp_path, doc), "--out", str(tmp_path)]) == 0
    fp = json.loads((tmp_path / "fixed_point.json").read_text())
    assert fp["residuals"][-1] <= 1e-10 and fp["verify"]["pullbackGap"] <= 1e-2
    assert (tmp_path / "u_star.csv").exists() and (tmp_path / "equilibrium.csv").exists()


def test_seed_override_changes_output(tmp_path, capsys):
    doc = _doc(stationary={"n_samples": 20})
    cfg = _write(tmp_path, doc)
    main(["stationary", "--config", cfg, "--out", str(tmp_path / "a")])
    main(["stationary", "--config", cfg, "--out", str(tmp_path / "b"), "--seed", "8"])
    a = json.loads((tmp_path / "a" / "stationary.json").read_text())
    b = json.loads((tmp_path / "b" / "stationary.json").read_text())
    assert a["mean"] != b["mean"]


def test_deterministic_across_threads(tmp_path, capsys):
    for sub, threads in (("a", "1"), ("b", "2"), ("c", "1")):
        assert main(["example", "5.2", "--out", str(tmp_path / sub), "--threads", threads]) == 0
    files = sorted(os.listdir(tmp_path / "a"))
    for name in files:
        a = (tmp_path / "a" / name).read_bytes()
        for other in ("b", "c"):
            b = (tmp_path / other / name).read_bytes()
            if name.endswith(".json"):
                assert _strip_time(json.loads(a)) == _strip_time(json.loads(b))
            else:
                assert a == b, name


def test_console_entry_point(tmp_path):
    proc = subprocess.run([sys.executable, "-m", "sgsde.cli", "example", "4.0"],
                          capture_output=True, text=True)
    assert proc.returncode == 1
    assert json.loads(proc.stderr)["error"] == "ConfigurationError"
