import json
import subprocess
import sys

import pytest

from rkhsmeta import cli
from rkhsmeta.config import OUTPUT_DIR_ENV, default_run


def _small_config(tmp_path, **kw):
    run = default_run(**kw).to_dict()
    run.update({"hidden": [8, 8], "eval_tasks": 3})
    run["meta"]["meta_batch"] = 2
    path = tmp_path / "run.json"
    path.write_text(json.dumps(run))
    return path


def test_expm_check_exit_zero(tmp_path, capsys):
    assert cli.main(["expm-check", "--output-dir", str(tmp_path)]) == 0
    out = capsys.readouterr().out
    assert "PASS" in out and "FAIL" not in out
    assert (tmp_path / "expm_check.csv").exists()


def test_config_error_exit_two(tmp_path, capsys):
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps({"meta": {"inner_lr": -1.0}}))
    assert cli.main(["train", "--config", str(bad), "--output-dir", str(tmp_path)]) == cli.EXIT_CONFIG
    err = capsys.readouterr().err.strip().splitlines()[-1]
    assert err.startswith("error: ")
    payload = json.loads(err[len("error: "):])
    assert payload["type"] == "config" and payload["field"] == "meta.inner_lr"


def test_missing_config_file(tmp_path, capsys):
    assert cli.main(["train", "--config", str(tmp_path / "nope.json")]) == cli.EXIT_CONFIG
    assert "error: " in capsys.readouterr().err


def test_train_then_evaluate(tmp_path, capsys):
    cfg = _small_config(tmp_path)
    out = tmp_path / "out"
    assert cli.main(["train", "--config", str(cfg), "--meta-iterations", "2", "--output-dir", str(out)]) == 0
    assert (out / "metrics.csv").exists() and (out / "checkpoint.json").exists()
    assert cli.main(["evaluate", "--config", str(cfg), "--checkpoint", str(out / "checkpoint.json"),
                     "--output-dir", str(out)]) == 0
    assert "mse=" in capsys.readouterr().out
    assert (out / "eval.csv").exists()


def test_evaluate_spec_mismatch_exit_two(tmp_path, capsys):
    cfg = _small_config(tmp_path)
    out = tmp_path / "out"
    assert cli.main(["train", "--config", str(cfg), "--meta-iterations", "0", "--output-dir", str(out)]) == 0
    wide = json.loads(cfg.read_text())
    wide["hidden"] = [4]
    other = tmp_path / "other.json"
    other.write_text(json.dumps(wide))
    code = cli.main(["evaluate", "--config", str(other), "--checkpoint", str(out / "checkpoint.json"),
                     "--output-dir", str(out)])
    assert code == cli.EXIT_CONFIG
    assert '"spec-mismatch"' in capsys.readouterr().err


def test_output_dir_from_environment(tmp_path, monkeypatch):
    monkeypatch.setenv(OUTPUT_DIR_ENV, str(tmp_path / "env"))
    cfg = _small_config(tmp_path)
    assert cli.main(["train", "--config", str(cfg), "--meta-iterations", "0"]) == 0
    assert (tmp_path / "env" / "checkpoint.json").exists()


def test_unknown_algorithm_rejected_by_parser():
    with pytest.raises(SystemExit):
        cli.main(["train", "--algorithm", "sgd-net"])


def test_module_entry_point(tmp_path):
    proc = subprocess.run([sys.executable, "-m", "rkhsmeta", "expm-check", "--output-dir", str(tmp_path)],
                          capture_output=True, text=True, check=False)
    assert proc.returncode == 0, proc.stderr
