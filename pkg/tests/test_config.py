import pytest

from fingerpose.config import build_config, load_config
from fingerpose.errors import InvalidArgumentError


def test_defaults():
    cfg = build_config()
    assert cfg.seed is None and cfg.map_k == 4 and cfg.max_touches == 8
    assert cfg.net.T_ang == 120 and cfg.train.epochs == 30
    with pytest.raises(InvalidArgumentError, match="missing path"):
        cfg.path("data")
    assert cfg.path("data", required=False) is None


def test_top_level_seed_fans_out():
    cfg = build_config({"seed": 7, "train": {"seed": 3}})
    assert cfg.synth.seed == 7 and cfg.net.init_seed == 7 and cfg.train.seed == 3


def test_overrides_win_and_none_is_ignored():
    raw = {"train": {"epochs": 5, "lr_start": 0.01}, "paths": {"data": "a.csv"}}
    cfg = build_config(raw, {"train": {"epochs": 2, "lr_start": None}, "paths": {"data": None}})
    assert cfg.train.epochs == 2 and cfg.train.lr_start == 0.01 and cfg.path("data") == "a.csv"


@pytest.mark.parametrize("raw", [
    {"bogus": 1},
    {"net": {"layers": 3}},
    {"train": {"momentum": 0.9}},
    {"synth": {"gt_mapping": {}}},
    {"paths": {"model": "x"}},
    {"mapping": {"degree": 3}},
    {"mapping": {"k": 0}},
    {"mapping": {"input_scale": [1.0]}},
    {"seed": 1.5},
    {"net": {"angle_head": "polar"}},
    {"train": {"lr_start": 1e-6, "lr_end": 1e-3}},
    {"synth": {"yaw_range": 60}},
])
def test_invalid_configs_are_rejected(raw):
    with pytest.raises(InvalidArgumentError):
        build_config(raw)


def test_toml_file(tmp_path):
    path = tmp_path / "run.toml"
    path.write_text(
        'seed = 11\n[paths]\nout = "runs/a"\n[net]\ncap_channels = [4, 8]\nangle_head = "trig"\n'
        "[mapping]\nk = 3\n"
    )
    cfg = load_config(path)
    assert cfg.net.cap_channels == (4, 8) and cfg.net.angle_head == "trig"
    assert cfg.map_k == 3 and cfg.path("out") == "runs/a" and cfg.train.seed == 11
    path.write_text("seed = \n")
    with pytest.raises(InvalidArgumentError):
        load_config(path)
