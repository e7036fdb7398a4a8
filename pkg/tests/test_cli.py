import json
import subprocess
import sys

import pytest

from ttsr.cli import EXIT_CONFIG, EXIT_OK, EXIT_REMOTE, EXIT_RUNTIME, main
from ttsr.persistence import load_config, load_report
from conftest import DATA
from stub_server import StubServer

SMALL = {"T": 3, "n_test": 8, "n_eval": 20, "G": 4, "batch": 6, "eval_k": 4}


def write_cfg(tmp_path, **overrides):
    path = tmp_path / "cfg.json"
    path.write_text(json.dumps({**SMALL, **overrides}))
    return path


def call(capsys, *argv):
    code = main([str(a) for a in argv])
    out, err = capsys.readouterr()
    return code, out, err


@pytest.fixture
def run_dir(tmp_path, capsys):
    out = tmp_path / "run"
    code, stdout, _ = call(capsys, "run", "--config", write_cfg(tmp_path), "--out", out)
    assert code == EXIT_OK
    return out, json.loads(stdout)


def test_run_prints_summary(run_dir):
    out, summary = run_dir
    assert summary["iterations"] == 3 and summary["run_dir"] == str(out)
    assert summary["final_eval"] == load_report(out).final_eval


def test_mode_and_seed_overrides(tmp_path, capsys):
    code, stdout, _ = call(capsys, "run", "--config", write_cfg(tmp_path), "--mode", "ttrl",
                           "--seed", 5, "--out", tmp_path / "o")
    assert code == EXIT_OK
    cfg = load_config(tmp_path / "o")
    assert (cfg.mode, cfg.seed) == ("ttrl", 5)


def test_default_output_directory(tmp_path, capsys, monkeypatch):
    monkeypatch.chdir(tmp_path)
    code, stdout, _ = call(capsys, "run", "--config", write_cfg(tmp_path), "--mode", "frozen")
    assert code == EXIT_OK
    assert json.loads(stdout)["run_dir"].startswith("runs/frozen-seed0-")


def test_eval_reproduces_final_evaluation(run_dir, capsys):
    out, summary = run_dir
    code, stdout, _ = call(capsys, "eval", "--run-dir", out, "--mode", "greedy")
    assert code == EXIT_OK and json.loads(stdout)["accuracy"] == summary["final_eval"]["greedy"]
    code, stdout, _ = call(capsys, "eval", "--run-dir", out, "--mode", "mean@k", "--k", 4)
    assert code == EXIT_OK and json.loads(stdout)["accuracy"] == summary["final_eval"]["mean@4"]
    code, stdout, _ = call(capsys, "eval", "--run-dir", out, "--mode", "mean@4")
    assert code == EXIT_OK and json.loads(stdout)["k"] == 4


def test_eval_argument_errors(run_dir, capsys):
    out, _ = run_dir
    assert call(capsys, "eval", "--run-dir", out, "--mode", "mean@k")[0] == EXIT_CONFIG
    assert call(capsys, "eval", "--run-dir", out, "--mode", "mean@k", "--k", 0)[0] == EXIT_CONFIG
    assert call(capsys, "eval", "--run-dir", out, "--mode", "best")[0] == EXIT_CONFIG


def test_replay(run_dir, capsys):
    out, _ = run_dir
    code, stdout, _ = call(capsys, "replay", "--run-dir", out)
    assert code == EXIT_OK
    assert json.loads(stdout)["report"] == load_report(out).to_dict()
    code, stdout, _ = call(capsys, "replay", "--run-dir", out, "--verify")
    assert code == EXIT_OK and json.loads(stdout)["verified"] is True


def test_inspect(run_dir, capsys):
    out, _ = run_dir
    code, stdout, _ = call(capsys, "inspect", "--run-dir", out, "--iteration", 2)
    doc = json.loads(stdout)
    assert code == EXIT_OK and doc["t"] == 2 and doc["complete"] is True
    assert doc["training_set_size"] == 8 + doc["n_variants_in_training_set"]
    code, _, err = call(capsys, "inspect", "--run-dir", out, "--iteration", 9)
    assert code == EXIT_RUNTIME and "no iteration 9" in err


def test_config_errors_exit_1(tmp_path, capsys):
    code, _, err = call(capsys, "run", "--config", write_cfg(tmp_path, G=1), "--out", tmp_path / "o")
    assert code == EXIT_CONFIG and "G ≥ 2 required" in err
    bad = tmp_path / "bad.yaml"
    bad.write_text("G: [unclosed\n")
    assert call(capsys, "run", "--config", bad)[0] == EXIT_CONFIG
    assert call(capsys, "run", "--config", tmp_path / "missing.json")[0] == EXIT_CONFIG
    code, _, err = call(capsys, "run", "--config", write_cfg(tmp_path, gamma=2))
    assert code == EXIT_CONFIG and "unknown config field" in err


def test_runtime_errors_exit_2(run_dir, tmp_path, capsys):
    out, _ = run_dir
    code, _, err = call(capsys, "run", "--config", write_cfg(tmp_path), "--out", out)
    assert code == EXIT_RUNTIME and "not empty" in err
    assert call(capsys, "replay", "--run-dir", tmp_path / "nowhere")[0] == EXIT_RUNTIME
    assert call(capsys, "eval", "--run-dir", tmp_path / "nowhere")[0] == EXIT_RUNTIME


def test_remote_errors_exit_3(tmp_path, capsys):
    with StubServer(responder=lambda body: (503, {"error": "down"})) as server:
        cfg = write_cfg(tmp_path, backend="remote", url=server.url, model="m", max_retries=0,
                        questions_path=str(DATA / "remote_questions.jsonl"))
        code, _, err = call(capsys, "run", "--config", cfg, "--out", tmp_path / "o")
    assert code == EXIT_REMOTE and "remote endpoint error" in err


def test_module_entry_point(tmp_path):
    proc = subprocess.run([sys.executable, "-m", "ttsr", "run", "--config", str(write_cfg(tmp_path, G=1))],
                          capture_output=True, text=True)
    assert proc.returncode == EXIT_CONFIG
    proc = subprocess.run([sys.executable, "-m", "ttsr", "--help"], capture_output=True, text=True)
    assert proc.returncode == 0 and "inspect" in proc.stdout
