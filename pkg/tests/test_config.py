import pytest

from noether_razor.config import RunConfig, format_value, parse_value, preset
from noether_razor.dynamics import SystemSpec
from noether_razor.exceptions import PreconditionError


@pytest.mark.parametrize("text, value", [
    ("1e-3", 1e-3), ("200, 200", [200, 200]), ("none", None), ("True", True),
    ("uniform", "uniform"), ("3", 3),
])
def test_parse_value(text, value):
    assert parse_value(text) == value


def test_format_roundtrip():
    for v in (0.1, 1e-8, 3, None, False, [64, 64], "normal(0,1)"):
        assert parse_value(format_value(v)) == v


@pytest.mark.parametrize("kind", ["sho", "nharm", "nbody"])
@pytest.mark.parametrize("scale", ["paper", "desk"])
def test_preset_text_roundtrip(kind, scale, tmp_path):
    rc = preset(kind, scale, mode="oracle", seed=4)
    path = tmp_path / "run.ini"
    rc.save(path)
    back = RunConfig.load(path)
    assert back == rc
    assert back.train.mode == "oracle" and back.data_seed == 4


def test_paper_recipe_values():
    sho = preset("sho", "paper")
    assert sho.train.hidden == (200, 200) and sho.train.alpha == 2.0
    assert sho.train.S == 200 and sho.train.tau_measure == "uniform"
    assert sho.train.sigma2_policy == "fixed" and sho.train.batch_traj is None
    assert sho.train.epochs == 2000 and sho.train.lr == 1e-3
    nh = preset("nharm", "paper")
    assert nh.system == SystemSpec("nharm", n=3)
    assert nh.train.hidden == (200, 200, 200) and nh.train.K == 12
    assert nh.train.batch_traj == 20 and nh.train.n_weight_samples == 2
    nb = preset("nbody", "paper")
    assert nb.train.hidden == (250,) * 4 and nb.train.K == 10
    assert nb.analysis["min_parallel"] == 0.95


def test_desk_overrides():
    rc = preset("nharm", "desk", n=2)
    assert rc.train.hidden == (128, 128, 128) and rc.train.S == 20 and rc.train.lr == 3e-3
    assert rc.recipe().n_traj == 30 and rc.recipe().points_per_traj == 10
    assert rc.train.n_weight_samples == 1
    # evaluation splits keep their own sizes
    assert rc.recipe("test").n_traj != 30 or rc.recipe("test").points_per_traj != 10


def test_unknown_entries_rejected():
    with pytest.raises(PreconditionError):
        RunConfig.from_text("[system]\nkind = sho\nwobble = 1\n")
    with pytest.raises(PreconditionError):
        RunConfig.from_text("[extras]\na = 1\n")
    with pytest.raises(PreconditionError):
        RunConfig.from_text("[train]\nlearning_rate = 1\n")
    with pytest.raises(PreconditionError):
        RunConfig.from_text("not an ini file")
    with pytest.raises(PreconditionError):
        preset("pendulum")


def test_minimal_text():
    rc = RunConfig.from_text("[system]\nkind = nbody\nn = 3\nd = 2\n\n[train]\nhidden = 16\n")
    assert rc.system.phase_dim == 12
    assert rc.train.hidden == (16,)
    assert rc.analysis["threshold"] == 0.05
