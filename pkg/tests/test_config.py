import json

import pytest

from ttsr.config import ConfigError, RunConfig, config_from_mapping, config_hash, load_config, validate_config


def test_defaults_follow_parameter_table():
    cfg = validate_config(RunConfig())
    assert (cfg.group_size, cfg.n_variants, cfg.n_iterations, cfg.kl_coef, cfg.batch_size) == (8, 4, 20, 0.001, 16)
    assert (cfg.sim_penalty, cfg.sim_threshold) == (1.0, 0.75)
    assert cfg.max_failed == cfg.n_variants
    assert cfg.teacher_learning_rate == cfg.learning_rate


def test_group_size_boundary():
    with pytest.raises(ConfigError, match="G ≥ 2 required"):
        validate_config(RunConfig(group_size=1))


def test_tau_lambda_accepted_unchanged():
    cfg = validate_config(RunConfig(sim_threshold=0.75, sim_penalty=1.0))
    assert cfg.sim_threshold == 0.75 and cfg.sim_penalty == 1.0


def test_reports_every_violation():
    with pytest.raises(ConfigError) as info:
        validate_config(RunConfig(group_size=1, clip_eps=1.0, sim_threshold=1.0, adv_eps=0.0, batch_size=0))
    fields = {e.split(":")[0] for e in info.value.errors}
    assert fields == {"group_size", "clip_eps", "sim_threshold", "adv_eps", "batch_size"}


def test_type_errors():
    with pytest.raises(ConfigError, match="group_size: expected an integer"):
        validate_config(RunConfig(group_size=2.5))
    with pytest.raises(ConfigError, match="mode"):
        validate_config(RunConfig(mode="bogus"))


def test_idempotent():
    once = validate_config(RunConfig(n_variants=3))
    assert validate_config(once) == once


def test_remote_needs_endpoint():
    with pytest.raises(ConfigError) as info:
        validate_config(RunConfig(backend="remote"))
    assert {e.split(":")[0] for e in info.value.errors} == {"endpoint_url", "model_name", "questions_path"}


def test_aliases_and_unknown_keys():
    cfg = config_from_mapping({"G": 4, "M": 2, "T": 5, "beta": 0, "lambda": 1, "tau": 0.5, "batch": 3})
    assert (cfg.group_size, cfg.n_variants, cfg.n_iterations, cfg.batch_size) == (4, 2, 5, 3)
    assert isinstance(cfg.kl_coef, float) and isinstance(cfg.sim_penalty, float)
    with pytest.raises(ConfigError, match="unknown config field"):
        config_from_mapping({"gamma": 1})
    with pytest.raises(ConfigError, match="more than once"):
        config_from_mapping({"G": 4, "group_size": 4})


def test_load_json_and_yaml(tmp_path):
    (tmp_path / "c.json").write_text(json.dumps({"G": 4, "mode": "ttrl"}))
    (tmp_path / "c.yaml").write_text("G: 4\nmode: ttrl\n")
    assert load_config(tmp_path / "c.json") == load_config(tmp_path / "c.yaml")
    (tmp_path / "bad.json").write_text("{nope")
    with pytest.raises(ConfigError, match="cannot parse"):
        load_config(tmp_path / "bad.json")
    with pytest.raises(ConfigError):
        load_config(tmp_path / "missing.json")


def test_hash_stable_and_sensitive():
    a = validate_config(RunConfig())
    assert config_hash(a) == config_hash(validate_config(RunConfig()))
    assert config_hash(a) != config_hash(validate_config(RunConfig(seed=1)))
    assert len(config_hash(a)) == 16
