import csv
import json

import numpy as np
import pytest

from noether_razor import variational as vi
from noether_razor.cli import main
from noether_razor.config import preset
from noether_razor.dynamics import Dataset


def run(*argv):
    return main([str(a) for a in argv])


@pytest.fixture
def sho_data(tmp_path):
    path = tmp_path / "sho.json"
    assert run("generate", "--system", "sho", "--seed", 0, "--out", path) == 0
    return path


@pytest.fixture
def tiny_config(tmp_path):
    rc = preset("sho", "desk")
    rc.train.hidden = (8,)
    rc.train.S = 4
    rc.train.S_eval = 8
    rc.train.epochs = 2
    path = tmp_path / "run.ini"
    rc.save(path)
    return path


def test_generate_counts(tmp_path, sho_data, capsys):
    assert len(Dataset.load(sho_data)) == 21
    out = tmp_path / "test.json"
    assert run("generate", "--system", "sho", "--variant", "test", "--seed", 1, "--out", out) == 0
    assert len(Dataset.load(out)) == 2000
    assert "pairs: 2000" in capsys.readouterr().out


def test_generate_byte_identical(tmp_path):
    a, b = tmp_path / "a.json", tmp_path / "b.json"
    for path in (a, b):
        run("generate", "--system", "nharm", "--n", 2, "--trajectories", 3, "--points", 4,
            "--seed", 7, "--out", path)
    assert a.read_bytes() == b.read_bytes()


def test_generate_errors(tmp_path):
    with pytest.raises(SystemExit) as info:
        run("generate", "--system", "pendulum", "--out", tmp_path / "x.json")
    assert info.value.code == 2
    assert run("generate", "--system", "sho", "--trajectories", 0, "--out",
               tmp_path / "x.json") == 2
    assert run("generate", "--system", "sho", "--out", tmp_path / "no" / "x.json") == 3


def test_train_evaluate_consistency(tmp_path, sho_data, tiny_config, capsys):
    ck_path = tmp_path / "ck.json"
    assert run("train", "--data", sho_data, "--config", tiny_config, "--mode", "learn",
               "--out", ck_path) == 0
    printed = capsys.readouterr().out.splitlines()
    assert printed[0].split() == ["mode", "Train", "MSE", "NLL/N", "KL/N", "-ELBO/N"]
    _, train_mse, nll, kl, nelbo = printed[1].split()
    assert abs(float(nelbo) - (float(nll) + float(kl))) < 1e-9
    ck = vi.Checkpoint.load(ck_path)
    assert ck.run_config["train"]["mode"] == "learn"
    report = tmp_path / "eval.json"
    assert run("evaluate", "--checkpoint", ck_path, "--data", sho_data, "--S", ck.config.S,
               "--out", report) == 0
    doc = json.loads(report.read_text())
    assert doc["schema_version"] == "1" and doc["seed"] == ck.config.seed
    assert abs(doc["results"][0]["test_mse"] - ck.metrics["train_mse"]) < 1e-9


def test_train_epochs_zero_and_oracle(tmp_path, sho_data, tiny_config):
    ck_path = tmp_path / "ck.json"
    assert run("train", "--data", sho_data, "--config", tiny_config, "--mode", "oracle",
               "--system", "sho", "--epochs", 0, "--out", ck_path) == 0
    ck = vi.Checkpoint.load(ck_path)
    init = vi.initialize(Dataset.load(sho_data), ck.config)
    np.testing.assert_array_equal(ck.posteriors[0].mean, init.posteriors[0].mean)
    assert ck.bank.K == 1 and not ck.bank.trainable


def test_train_rejects_mismatch(tmp_path, sho_data, tiny_config):
    assert run("train", "--data", sho_data, "--config", tiny_config, "--system", "nharm",
               "--out", tmp_path / "ck.json") == 2
    assert run("train", "--data", tmp_path / "missing.json", "--out", tmp_path / "ck.json") == 3


def test_train_abort_exit_code(tmp_path, sho_data, tiny_config, monkeypatch):
    def boom(*a, **k):
        raise vi.TrainingAborted("nan", last_good=None, epoch=0)

    monkeypatch.setattr(vi, "train", boom)
    assert run("train", "--data", sho_data, "--config", tiny_config,
               "--out", tmp_path / "ck.json") == 4


def test_analyze_oracle_and_vanilla(tmp_path, sho_data, tiny_config):
    for mode in ("oracle", "vanilla"):
        ck = tmp_path / f"{mode}.json"
        run("train", "--data", sho_data, "--config", tiny_config, "--mode", mode,
            "--epochs", 0, "--out", ck)
        out = tmp_path / f"{mode}_report.json"
        assert run("analyze", "--checkpoint", ck, "--out", out) == 0
        doc = json.loads(out.read_text())
        assert doc["schema_version"] == "1" and "config" in doc and doc["seed"] == 0
        rows = list(csv.reader(open(tmp_path / f"{mode}_report.csv")))
        if mode == "oracle":
            assert doc["parallelness"] == pytest.approx([1.0])
            assert rows[0] == ["index", "singular_value", "parallelness"] and len(rows) == 2
        else:
            assert doc["singular_values"] == [] and "no bank" in doc["notes"]


def test_evaluate_dimension_mismatch(tmp_path, sho_data, tiny_config):
    ck = tmp_path / "ck.json"
    run("train", "--data", sho_data, "--config", tiny_config, "--epochs", 0, "--out", ck)
    other = tmp_path / "nh.json"
    run("generate", "--system", "nharm", "--n", 2, "--trajectories", 2, "--points", 3,
        "--out", other)
    assert run("evaluate", "--checkpoint", ck, "--data", other) == 2


def test_field_export(tmp_path, sho_data, tiny_config):
    out = tmp_path / "field.csv"
    assert run("field", "--analytic", "--range", -1, 1, "--resolution", 3, "--out", out) == 0
    rows = list(csv.reader(open(out)))
    assert rows[0] == ["q", "p", "H"] and len(rows) == 10
    for q, p, h in rows[1:]:
        assert float(h) == (float(q) ** 2 + float(p) ** 2) / 2
    meta = json.loads((tmp_path / "field.csv.meta.json").read_text())
    assert meta["resolution"] == 3
    ck = tmp_path / "ck.json"
    run("train", "--data", sho_data, "--config", tiny_config, "--epochs", 0, "--out", ck)
    assert run("field", "--checkpoint", ck, "--resolution", 4, "--S", 8, "--out", out) == 0
    assert len(list(csv.reader(open(out)))) == 17


def test_field_requires_planar_phase_space(tmp_path):
    assert run("field", "--analytic", "--system", "nharm", "--n", 2,
               "--out", tmp_path / "f.csv") == 2
    assert run("field", "--out", tmp_path / "f.csv") == 2
