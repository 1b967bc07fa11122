import json

import pytest

from ethtlm.config import DEFAULTS, example_config_path, load_config, pipeline_config
from ethtlm.errors import InvalidConfig


def test_defaults():
    cfg = load_config(env={})
    assert cfg.to_dict() == DEFAULTS
    pc = pipeline_config(cfg)
    assert pc.max_len == 512 and pc.pretrain.tau == 0.1 and pc.pretrain.gamma == 6.0


def test_layering_file_env_override(tmp_path):
    p = tmp_path / "c.yaml"
    p.write_text("train:\n  epochs: 3\n  lr: 0.01\nmask:\n  tau: 0.2\n")
    cfg = load_config(p, env={"ETHTLM_TRAIN__EPOCHS": "4", "ETHTLM_MODEL__DIM": "32"},
                      overrides=["train.epochs=5"])
    assert cfg["train.epochs"] == 5 and cfg["model.dim"] == 32
    assert cfg["train.lr"] == 0.01 and cfg["mask.tau"] == 0.2


@pytest.mark.parametrize("text", ["bogus:\n  x: 1\n", "train:\n  nope: 1\n", "train:\n  epochs: many\n",
                                  "train:\n  freeze_encoder: 3\n", "train: 5\n", "[1, 2\n"])
def test_invalid_files(tmp_path, text):
    p = tmp_path / "c.yaml"
    p.write_text(text)
    with pytest.raises(InvalidConfig):
        load_config(p, env={})


def test_invalid_overrides():
    with pytest.raises(InvalidConfig):
        load_config(env={}, overrides=["train.epochs"])
    with pytest.raises(InvalidConfig):
        load_config(env={}, overrides=["model.unknown=1"])


def test_manifest_replay(tmp_path):
    cfg = load_config(env={}, overrides=["train.epochs=2", "run.seed=7"])
    p = tmp_path / "manifest.json"
    p.write_text(json.dumps({"config_hash": "x", "config": cfg.to_dict(), "seed": 7}))
    assert load_config(p, env={}).to_dict() == cfg.to_dict()


def test_example_config_loads():
    cfg = load_config(example_config_path(), env={})
    pipeline_config(cfg)


def test_exponent_floats_accepted(tmp_path):
    p = tmp_path / "c.yaml"
    p.write_text("train:\n  lr: 1e-4\n")
    assert load_config(p, env={}, overrides=["train.ft_lr=5e-4"])["train.lr"] == 1e-4
    assert load_config(env={}, overrides=["train.ft_lr=5e-4"])["train.ft_lr"] == 5e-4
