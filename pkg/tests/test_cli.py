import json

import numpy as np
import pytest

from pgcidl import cli
from pgcidl.data import Bag, write_bag_file
from pgcidl.exceptions import NumericalError


def run(*argv):
    return cli.run([str(a) for a in argv])


@pytest.fixture(scope="module")
def run_dir(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    assert run("synth", "--num-bags", 15, "--instances-per-bag", 10, "--d-in", 6, "--seed", 0,
               "--out", root / "data") == 0
    assert run("train", "--data", root / "data", "--out", root / "run", "--epochs", 2, "--lr", 1e-3,
               "--width", 6, "--rank", 2) == 0
    return root


def test_synth_outputs(run_dir):
    manifest = json.loads((run_dir / "data" / "manifest.json").read_text())
    assert manifest["command"] == "synth" and manifest["seed"] == 0
    ds = json.loads((run_dir / "data" / "dataset.json").read_text())
    assert len(ds["bags"]) == 15


def test_train_outputs(run_dir):
    manifest = json.loads((run_dir / "run" / "manifest.json").read_text())
    assert manifest["train_config"]["epochs"] == 2
    assert (run_dir / "run" / "checkpoint.bin").exists()
    assert len((run_dir / "run" / "history.csv").read_text().splitlines()) == 3


def test_eval_is_byte_identical(run_dir, capsys):
    assert run("eval", "--checkpoint", run_dir / "run" / "checkpoint.bin", "--data", run_dir / "data",
               "--out", run_dir / "e1") == 0
    assert run("eval", "--checkpoint", run_dir / "run" / "checkpoint.bin", "--data", run_dir / "data",
               "--out", run_dir / "e2", "--split", "all") == 0
    a = (run_dir / "e1" / "report.json").read_bytes()
    assert a == (run_dir / "e2" / "report.json").read_bytes()
    report = json.loads(a)
    assert report["num_bags"] == 15
    assert (run_dir / "e1" / "bags.csv").exists()


def test_eval_split(run_dir):
    assert run("eval", "--checkpoint", run_dir / "run" / "checkpoint.bin", "--data", run_dir / "data",
               "--out", run_dir / "ev", "--split", "val") == 0
    assert json.loads((run_dir / "ev" / "report.json").read_text())["num_bags"] == 6


def test_inspect_weights(run_dir, capsys):
    assert run("inspect", "--checkpoint", run_dir / "run" / "checkpoint.bin", "--data", run_dir / "data",
               "--bag-id", "bag_00003", "--out", run_dir / "ins") == 0
    trace = json.loads((run_dir / "ins" / "traces" / "bag_00003.json").read_text())
    assert abs(sum(trace["w"]) - 1) <= 1e-9
    assert sorted(trace["factor_map"].values()) == [0, 1, 2]
    assert len(trace["assignments"]) == 10
    capsys.readouterr()
    assert run("inspect", "--checkpoint", run_dir / "run" / "checkpoint.bin",
               "--bag", run_dir / "data" / "bags" / "bag_00003.pgbf") == 0
    assert json.loads(capsys.readouterr().out)["probs"] == trace["probs"]


def test_dimension_mismatch_exits_2(run_dir, tmp_path, capsys):
    assert run("synth", "--num-bags", 6, "--d-in", 8, "--out", tmp_path / "d8") == 0
    code = run("eval", "--checkpoint", run_dir / "run" / "checkpoint.bin", "--data", tmp_path / "d8",
               "--out", tmp_path / "e")
    assert code == 2
    assert "feature_dim" in capsys.readouterr().err
    write_bag_file(Bag(np.ones((4, 8)), 0, "odd"), tmp_path / "odd.pgbf")
    assert run("inspect", "--checkpoint", run_dir / "run" / "checkpoint.bin", "--bag", tmp_path / "odd.pgbf") == 2


@pytest.mark.parametrize("argv", [("synth", "--bogus", "1", "--out", "x"), ("train",), ("frobnicate",),
                                  ("synth", "--out", "x", "--fractions", "0.5", "0.5", "0.0")])
def test_usage_errors_exit_1(argv, tmp_path, monkeypatch, capsys):
    monkeypatch.chdir(tmp_path)
    assert run(*argv) == 1


def test_missing_files_exit_2(tmp_path):
    assert run("eval", "--checkpoint", tmp_path / "none.bin", "--data", tmp_path, "--out", tmp_path / "o") == 2


def test_numerical_failure_exits_3(run_dir, tmp_path, monkeypatch):
    def boom(*a, **k):
        raise NumericalError("non-finite loss")

    monkeypatch.setattr(cli, "train", boom)
    assert run("train", "--data", run_dir / "data", "--out", tmp_path / "r", "--epochs", 1) == 3
