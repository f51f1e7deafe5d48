import pytest

from ucdir.config import ConfigError, RunConfig, apply_overrides, as_dict, env_overrides
from ucdir.data import GeneratorSpec
from ucdir.losses import LossConfig


def test_defaults_match_component_defaults():
    cfg = RunConfig()
    assert cfg.generator == GeneratorSpec()
    assert cfg.loss == LossConfig()
    tc = cfg.train_config()
    assert tc.K == cfg.generator.num_classes
    assert tc.epochs == 200 and tc.batch_size == 64 and tc.lr0 == 0.0002
    assert cfg.eval.ks == (1, 5, 15)


def test_desk_scale_values():
    tc = RunConfig.desk_scale().train_config()
    assert tc.epochs == 60 and tc.batch_size == 32


def test_toml_round_trip(tmp_path):
    cfg = apply_overrides(RunConfig(), ["loss.phi=0.25", "eval.ks=[50, 100, 200]", "train.K=7",
                                        "generator.nonlinearity_B=\"abs\""])
    p = tmp_path / "c.toml"
    p.write_text(cfg.to_toml())
    back = RunConfig.load(p)
    assert as_dict(back) == as_dict(cfg)


def test_file_values_and_unknown_keys(tmp_path):
    p = tmp_path / "c.toml"
    p.write_text("[train]\nepochs = 3\n[loss]\ngamma = 0.0\n")
    cfg = RunConfig.load(p)
    assert cfg.train["epochs"] == 3 and cfg.loss.gamma == 0.0
    p.write_text("[train]\nepoch = 3\n")
    with pytest.raises(ConfigError, match="train.epoch"):
        RunConfig.load(p)
    p.write_text("[training]\nepochs = 3\n")
    with pytest.raises(ConfigError, match="training"):
        RunConfig.load(p)


def test_type_and_invariant_errors():
    with pytest.raises(ConfigError, match="train.epochs"):
        apply_overrides(RunConfig(), ["train.epochs=2.5"])
    with pytest.raises(ConfigError, match="T1"):
        apply_overrides(RunConfig(), ["loss.T1=50", "loss.T2=10"])
    with pytest.raises(ConfigError):
        apply_overrides(RunConfig(), ["eval.directions=[\"A2C\"]"])
    with pytest.raises(ConfigError, match="section.key=value"):
        apply_overrides(RunConfig(), ["epochs=3"])


def test_env_overrides():
    env = {"UCDIR_TRAIN_LR0": "0.5", "UCDIR_LOSS_USE_DD": "false", "HOME": "/x"}
    cfg = env_overrides(RunConfig(), env)
    assert cfg.train["lr0"] == 0.5 and cfg.loss.use_DD is False
    with pytest.raises(ConfigError, match="UCDIR_TRAIN_NOPE"):
        env_overrides(RunConfig(), {"UCDIR_TRAIN_NOPE": "1"})


@pytest.mark.parametrize("variant,expected", [
    ("v1", (False, False, False)),
    ("v2", (True, False, False)),
    ("v3", (True, True, False)),
    ("full", (True, True, True)),
])
def test_variants(variant, expected):
    loss = RunConfig().train_config(variant=variant).loss
    assert (loss.use_CW, loss.use_SE, loss.use_DD) == expected
