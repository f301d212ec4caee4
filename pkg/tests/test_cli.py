from __future__ import annotations

import json
import shutil
import subprocess

import pytest

from maxent_pomdp.cli import main
from maxent_pomdp.fsc import parse_controller
from maxent_pomdp.oracle import ex1_closed_form

FAST = ["--restarts", "2", "--max-iters", "60"]


def run_cli(capsys, argv):
    code = main(argv)
    captured = capsys.readouterr()
    return code, captured.out, captured.err


CYCLIC_MODEL = json.dumps(
    {
        "states": ["x", "y"],
        "initial": "x",
        "actions": ["a"],
        "observations": ["z"],
        "transitions": [
            {"from": "x", "action": "a", "to": {"x": 0.5, "y": 0.5}},
            {"from": "y", "action": "a", "to": {"x": 1.0}},
        ],
    }
)

LOOP_CONTROLLER = json.dumps(
    {"k": 1, "delta": "chain", "gamma": [{"q": 1, "z": "z", "dist": {"a": 1.0}}]}
)


def test_validate_builtin(capsys):
    code, out, _ = run_cli(capsys, ["validate", "ex1"])
    assert code == 0
    report = json.loads(out)
    assert report["ok"] is True
    assert report["absorbing_states"] == ["s4", "s5", "s6"]
    assert report["is_dag_to_absorbing"] is True


def test_validate_missing_model(capsys):
    code, out, _ = run_cli(capsys, ["validate", "no_such_file.json"])
    assert code == 1
    report = json.loads(out)
    assert report["ok"] is False
    assert report["errors"]


def test_file_beats_builtin_name(capsys, tmp_path, monkeypatch):
    monkeypatch.chdir(tmp_path)
    (tmp_path / "ex1").write_text(CYCLIC_MODEL)
    code, out, _ = run_cli(capsys, ["validate", "ex1"])
    assert code == 0
    report = json.loads(out)
    # the file's two-state cycle, not the builtin's absorbing grid
    assert report["absorbing_states"] == []
    assert report["is_dag_to_absorbing"] is False


def test_synthesize_stdout(capsys):
    code, out, _ = run_cli(
        capsys, ["synthesize", "ex1", "-g", "0.9", "-k", "2"] + FAST
    )
    assert code == 0
    doc = json.loads(out)
    assert doc["result"]["converged"] is True
    assert abs(doc["result"]["entropy_bits"] - ex1_closed_form(0.9)) <= 0.02
    assert doc["result"]["expected_reward"] >= 0.9 - 1e-6
    assert doc["controller"]["k"] == 2
    assert doc["controller"]["delta"] == "chain"


def test_synthesize_out_files_and_evaluate(capsys, tmp_path):
    prefix = str(tmp_path / "run")
    code, out, _ = run_cli(
        capsys,
        ["synthesize", "ex1", "-g", "0.9", "-k", "2", "--out", prefix] + FAST,
    )
    assert code == 0
    assert out == ""
    result = json.loads((tmp_path / "run.result.json").read_text())
    controller_text = (tmp_path / "run.controller.json").read_text()
    controller = parse_controller(controller_text)
    assert controller.k == 2

    code, out, _ = run_cli(
        capsys, ["evaluate", "ex1", str(tmp_path / "run.controller.json")]
    )
    assert code == 0
    ev = json.loads(out)
    assert ev["finite"] is True
    assert ev["entropy_bits"] == pytest.approx(result["entropy_bits"], abs=1e-6)
    assert ev["expected_reward"] == pytest.approx(result["expected_reward"], abs=1e-6)


def test_evaluate_divergent_controller(capsys, tmp_path):
    model = tmp_path / "loop.json"
    model.write_text(CYCLIC_MODEL)
    controller = tmp_path / "controller.json"
    controller.write_text(LOOP_CONTROLLER)
    code, out, _ = run_cli(capsys, ["evaluate", str(model), str(controller)])
    assert code == 3
    ev = json.loads(out)
    assert ev["finite"] is False


def test_bound_ex1(capsys):
    code, out, _ = run_cli(capsys, ["bound", "ex1", "-g", "0.9", "--restarts", "3"])
    assert code == 0
    doc = json.loads(out)
    assert abs(doc["bound_bits"] - ex1_closed_form(0.9)) <= 0.02


def test_sweep_gamma_csv(capsys):
    code, out, _ = run_cli(
        capsys,
        ["sweep", "ex1", "--param", "gamma", "--from", "0.5", "--to", "0.7", "-k", "2"]
        + FAST,
    )
    assert code in (0, 2)
    lines = out.strip().splitlines()
    assert lines[0] == "param,entropy_bits,expected_reward,converged,restart_best,iterations,wall_ms"
    assert len(lines) == 4
    params = [line.split(",")[0] for line in lines[1:]]
    assert params == ["0.5", "0.6", "0.7"]
    for line in lines[1:]:
        fields = line.split(",")
        assert float(fields[1]) > 0
        assert fields[3] in ("true", "false")
        assert int(fields[5]) >= 1
        assert int(fields[6]) >= 0


def test_sweep_memory_csv_to_file(capsys, tmp_path):
    out_file = tmp_path / "sweep.csv"
    code, out, _ = run_cli(
        capsys,
        [
            "sweep", "ex1", "--param", "memory", "--from", "1", "--to", "2",
            "-g", "0.9", "--out", str(out_file),
        ]
        + FAST,
    )
    assert code in (0, 2)
    assert out == ""
    lines = out_file.read_text().strip().splitlines()
    assert len(lines) == 3
    assert [line.split(",")[0] for line in lines[1:]] == ["1", "2"]
    # more memory cannot hurt
    h1, h2 = (float(line.split(",")[1]) for line in lines[1:])
    assert h2 >= h1 - 0.05


def test_sweep_rejects_bad_ranges(capsys):
    code, _, err = run_cli(
        capsys,
        ["sweep", "ex1", "--param", "gamma", "--from", "0.9", "--to", "0.5"] + FAST,
    )
    assert code == 1
    assert "empty sweep range" in err
    code, _, err = run_cli(
        capsys,
        ["sweep", "ex1", "--param", "gamma", "--from", "0.5", "--to", "0.9", "--step", "-0.1"]
        + FAST,
    )
    assert code == 1
    assert "--step" in err


def test_thread_env_validation(capsys, monkeypatch):
    monkeypatch.setenv("MAXENT_THREADS", "0")
    assert main(["validate", "ex1"]) == 1
    capsys.readouterr()
    monkeypatch.setenv("MAXENT_THREADS", "abc")
    assert main(["validate", "ex1"]) == 1
    capsys.readouterr()
    monkeypatch.setenv("MAXENT_THREADS", "4")
    assert main(["validate", "ex1"]) == 0


def test_help_and_bad_flags(capsys):
    assert main(["--help"]) == 0
    out = capsys.readouterr().out
    assert "maxent-pomdp" in out
    assert main(["synthesize", "ex1", "--no-such-flag"]) == 1
    capsys.readouterr()
    assert main(["synthesize", "nope", "-g", "0.5"]) == 1


def test_console_script_installed(tmp_path):
    exe = shutil.which("maxent-pomdp")
    assert exe, "console script not on PATH"
    proc = subprocess.run(
        [exe, "validate", "ex2"], capture_output=True, text=True, timeout=120
    )
    assert proc.returncode == 0
    assert json.loads(proc.stdout)["ok"] is True
