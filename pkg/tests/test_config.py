"""Config defaults, strict parsing, and validation."""

import json

import pytest

from protofed.config import ExperimentConfig, config_from_dict, config_from_file
from protofed.errors import ConfigError, ParseError


def test_defaults():
    cfg = ExperimentConfig()
    assert cfg.rounds == 200 and cfg.local_epochs == 1
    assert cfg.batch_size == 16 and cfg.lr == 0.05 and cfg.weight_decay == 1e-5
    assert cfg.tau == 0.1 and cfg.proj_dim == 64
    assert (cfg.alpha_reg, cfg.alpha_con, cfg.alpha_align) == (1.0, 2.0, 0.1)
    assert cfg.algorithm == "mfcpl" and cfg.dataset == "synthetic"
    assert cfg.use_cmpr and cfg.use_cmpc and cfg.use_cma
    assert cfg.eval_mask_q is None
    cfg.validate()


def test_toggle_and_weight_views():
    cfg = ExperimentConfig(use_cmpc=False, alpha_align=0.7, tau=0.2)
    t = cfg.toggles()
    assert (t.cmpr, t.cmpc, t.cma) == (True, False, True)
    w = cfg.weights()
    assert w.alpha_align == 0.7 and w.tau == 0.2


def test_dict_round_trip():
    cfg = ExperimentConfig(algorithm="fedprox", mu=0.3, q=0.9, seed=7)
    assert config_from_dict(cfg.to_dict()) == cfg


def test_unknown_keys_rejected_by_name():
    with pytest.raises(ConfigError, match="learning_rate"):
        config_from_dict({"learning_rate": 0.1})


def test_type_errors():
    with pytest.raises(ConfigError):
        config_from_dict({"lr": "fast"})
    with pytest.raises(ConfigError):
        config_from_dict({"rounds": 2.5})
    with pytest.raises(ConfigError):
        config_from_dict({"use_cma": 1})
    with pytest.raises(ConfigError):
        config_from_dict({"algorithm": 3})
    # ints are fine where floats are expected
    assert config_from_dict({"lr": 1}).lr == 1.0


def test_eval_mask_q_accepts_null_and_number():
    assert config_from_dict({"eval_mask_q": None}).eval_mask_q is None
    assert config_from_dict({"eval_mask_q": 0.5}).eval_mask_q == 0.5
    with pytest.raises(ConfigError):
        config_from_dict({"eval_mask_q": "half"})


@pytest.mark.parametrize("bad", [
    {"algorithm": "fedsgd"},
    {"dataset": "cifar"},
    {"rounds": 0},
    {"participation": 0.0},
    {"participation": 1.5},
    {"q": -0.1},
    {"u": 1.0},
    {"tau": 0.0},
    {"cma_kind": "cosine"},
    {"n_classes": 1},
    {"view_size": 99},
    {"alpha_reg": -1.0},
])
def test_validation_rejects(bad):
    with pytest.raises(ConfigError):
        config_from_dict(bad)


def test_config_from_file(tmp_path):
    path = tmp_path / "run.json"
    path.write_text(json.dumps({"algorithm": "fedavg", "rounds": 3, "seed": 2}))
    cfg = config_from_file(path)
    assert cfg.algorithm == "fedavg" and cfg.rounds == 3 and cfg.seed == 2
    bad = tmp_path / "broken.json"
    bad.write_text("{not json")
    with pytest.raises(ParseError):
        config_from_file(bad)


def test_non_object_config_rejected():
    with pytest.raises(ConfigError):
        config_from_dict([1, 2])
