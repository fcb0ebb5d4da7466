import json
import subprocess
import sys

import pytest

from whiteout.cli import main, resolve_config
from whiteout.exceptions import SchemaError
from whiteout.network import Mlp

SIM = {"simulate": {"layer_sizes": [50, 10, 5], "n_train": 100, "n_test": 200}}


def run_cfg(tmp_path, cfg, name="cfg.json", out="out", extra=()):
    path = tmp_path / name
    path.write_text(json.dumps(cfg))
    return main(["run", str(path), "--out", str(tmp_path / out), *extra])


def read(tmp_path, name, out="out"):
    return (tmp_path / out / name).read_text()


def test_train_writes_model_and_trace(tmp_path, capsys):
    cfg = {"command": "train", "seed": 5, "data": SIM, "train": {"epochs": 50},
           "noise": {"variant": "whiteout_additive", "sigma2": 0.5, "gamma": 1.0, "lambda": 0.5}}
    assert run_cfg(tmp_path, cfg) == 0
    assert capsys.readouterr().out.startswith("train: trained 50 epochs, test accuracy")
    mlp = Mlp.from_json(read(tmp_path, "model.json"))
    assert mlp.layer_sizes == (50, 10, 5)
    trace = read(tmp_path, "trace.csv").splitlines()
    assert trace[0].startswith("# config: ") and trace[1] == "epoch,loss" and len(trace) == 52
    report = json.loads(read(tmp_path, "report.json"))
    assert report["config"]["seed"] == 5 and report["config"]["noise"]["sigma2"] == 0.5
    assert "out" not in report["config"]


def test_bad_gamma(tmp_path, capsys):
    cfg = {"command": "train", "data": SIM,
           "noise": {"variant": "whiteout_additive", "sigma2": 0.5, "gamma": 2.5}}
    assert run_cfg(tmp_path, cfg) == 1
    assert "gamma must lie in (0,2)" in capsys.readouterr().err


def test_unknown_key_is_named(tmp_path, capsys):
    assert run_cfg(tmp_path, {"command": "train", "data": SIM, "trian": {}}) == 1
    assert "'trian'" in capsys.readouterr().err
    assert run_cfg(tmp_path, {"command": "train", "data": SIM, "train": {"epoch": 3}}) == 1
    assert "train.epoch" in capsys.readouterr().err


def test_schema_errors():
    with pytest.raises(SchemaError, match="'command'"):
        resolve_config({})
    with pytest.raises(SchemaError, match="command must be one of"):
        resolve_config({"command": "fit"})
    with pytest.raises(SchemaError, match="seed"):
        resolve_config({"command": "train", "seed": -1})


def test_invalid_json(tmp_path, capsys):
    path = tmp_path / "cfg.json"
    path.write_text("{")
    assert main(["run", str(path)]) == 1
    assert "not valid JSON" in capsys.readouterr().err


def test_data_errors_exit_2(tmp_path, capsys):
    assert run_cfg(tmp_path, {"command": "train", "data": {"path": str(tmp_path / "none.csv")}}) == 2
    (tmp_path / "bad.csv").write_text("a,label\nx,1\n")
    assert run_cfg(tmp_path, {"command": "train", "data": {"path": str(tmp_path / "bad.csv")}}) == 2
    assert "column 'a'" in capsys.readouterr().err
    sim = {"simulate": {"layer_sizes": [50, 10, 5], "max_attempts": 1}}
    assert run_cfg(tmp_path, {"command": "simulate", "seed": 0, "data": sim}) == 2


def test_divergence_exits_3(tmp_path):
    (tmp_path / "d.csv").write_text("a,label\n1000,5000\n-2000,-9000\n3000,1000\n")
    cfg = {"command": "train", "data": {"path": str(tmp_path / "d.csv"), "task": "regression"},
           "train": {"lr": 10.0, "epochs": 500, "loss": "squared-error"}}
    assert run_cfg(tmp_path, cfg) == 3


def test_csv_training_and_evaluate(tmp_path):
    rows = "\n".join(f"{i % 3},{(i * 7) % 5},{int(i % 3 > 0)}" for i in range(30))
    (tmp_path / "d.csv").write_text("a,b,label\n" + rows + "\n")
    data = {"path": str(tmp_path / "d.csv"), "standardize": True}
    assert run_cfg(tmp_path, {"command": "train", "data": data, "train": {"epochs": 20}}) == 0
    ev = {"command": "evaluate", "data": data, "model": str(tmp_path / "out" / "model.json"),
          "evaluate": {"k": 3}, "noise": {"variant": "dropout", "tau": 0.2}}
    assert run_cfg(tmp_path, ev, out="ev") == 0
    report = json.loads(read(tmp_path, "report.json", "ev"))
    assert {"elf", "loss", "accuracy", "pelf"} <= set(report)


def test_seed_override(tmp_path):
    cfg = {"command": "simulate", "data": {"simulate": {"layer_sizes": [50, 10, 5], "n_train": 5,
                                                        "n_test": 5}}}
    assert run_cfg(tmp_path, cfg, out="a", extra=("--seed", "7")) == 0
    assert json.loads(read(tmp_path, "report.json", "a"))["config"]["seed"] == 7


def test_penalty_and_checks(tmp_path):
    pen = {"command": "penalty", "seed": 1, "glm": {"w": [1.0, -0.5, 0.3, 2.0, -1.0], "draws": 20000},
           "noise": {"variant": "whiteout_additive", "sigma2": 0.01, "gamma": 1.0}}
    assert run_cfg(tmp_path, pen, out="p") == 0
    rep = json.loads(read(tmp_path, "report.json", "p"))
    assert rep["draws"] == 20000 and rep["closed_form"] > 0
    rbm = {"command": "rbm-check", "rbm": {"draws": 20000},
           "noise": {"variant": "whiteout_additive", "sigma2": 0.005, "gamma": 1.0}}
    assert run_cfg(tmp_path, rbm, out="r") == 0
    assert set(json.loads(read(tmp_path, "report.json", "r"))) >= {
        "exact", "penalty", "mc", "discrepancy", "tolerance", "pass"}


def test_outputs_are_byte_identical(tmp_path):
    cfg = {"command": "tailbound", "seed": 6, "data": {"simulate": {
        "layer_sizes": [50, 10, 5], "n_train": 30, "n_test": 10}},
        "train": {"epochs": 20}, "tailbound": {"k_values": [2, 8], "reps": 20},
        "noise": {"variant": "whiteout_additive", "sigma2": 0.3, "gamma": 1.0, "lambda": 0.3}}
    assert run_cfg(tmp_path, cfg, out="a") == 0
    assert run_cfg(tmp_path, cfg, out="b") == 0
    for name in ("tail.csv", "report.json"):
        assert read(tmp_path, name, "a") == read(tmp_path, name, "b")


def test_console_script_help():
    done = subprocess.run([sys.executable, "-m", "whiteout.cli", "--help"], capture_output=True, text=True)
    assert done.returncode == 0 and "run" in done.stdout
