from pathlib import Path

import pytest
import yaml
from pydantic import ValidationError

from packbench import config as config_module
from packbench.bin import BinDims
from packbench.config import (
    PRESETS,
    Ablation,
    MalformedConfigError,
    TrainConfig,
    apply_overrides,
    dump_config,
    load_train_config,
    preset_config,
    resolve_config_path,
    save_config,
)
from packbench.env import RewardMode


def test_defaults_describe_the_packing_setup():
    config = TrainConfig()

    assert config.dims == BinDims.cube(10)
    assert config.ems_cap == 80
    assert config.reward_mode is RewardMode.STEP_WISE
    assert (config.lr, config.gamma, config.gae_lambda, config.clip_eps) == (7e-5, 1.0, 0.96, 0.3)
    assert (config.value_coef, config.entropy_coef, config.max_grad_norm) == (0.5, 0.001, 0.5)
    assert config.policy.embed_dim == 128
    assert config.policy.blocks == 3
    assert config.policy.ablation is Ablation.FULL


@pytest.mark.parametrize("name", list(PRESETS))
def test_presets_only_change_run_length(name):
    preset = preset_config(name)

    assert preset.lr == TrainConfig().lr
    assert preset.policy == TrainConfig().policy
    assert preset.total_steps == PRESETS[name]["epochs"] * PRESETS[name]["steps_per_epoch"]


def test_large_preset_collects_640_transitions_per_update():
    assert preset_config("large").transitions_per_update == 640


def test_unknown_preset_lists_the_available_ones():
    with pytest.raises(ValueError, match="smoke, desk, large"):
        preset_config("huge")


@pytest.mark.parametrize(
    "overrides",
    [{"bin": "10x10"}, {"lr": -1.0}, {"gamma": 1.5}, {"n_envs": 0}, {"unknown": 1}],
    ids=["bin", "lr", "gamma", "n-envs", "extra-field"],
)
def test_invalid_values_are_rejected(overrides):
    with pytest.raises(ValidationError):
        apply_overrides(TrainConfig(), overrides)


def test_overrides_skip_none_and_merge_policy():
    config = apply_overrides(TrainConfig(), {"lr": None, "seed": 3, "policy": {"blocks": 1}})

    assert config.lr == TrainConfig().lr
    assert config.seed == 3
    assert config.policy.blocks == 1
    assert config.policy.embed_dim == 128


def test_dump_then_load_keeps_every_value(tmp_path):
    original = apply_overrides(
        preset_config("smoke"),
        {"bin": "20x20x20", "reward_mode": "terminal", "policy": {"ablation": "mlp_mixer", "embed_dim": 16}},
    )
    path = tmp_path / "train.yaml"

    save_config(original, path)

    assert load_train_config(path, preset="desk") == original
    assert yaml.safe_load(dump_config(original))["policy"]["ablation"] == "mlp_mixer"


def test_file_values_override_the_preset(tmp_path):
    path = tmp_path / "train.yaml"
    path.write_text("lr: 0.001\npolicy:\n  blocks: 2\n")

    config = load_train_config(path, preset="smoke")

    assert config.lr == 0.001
    assert config.policy.blocks == 2
    assert config.n_envs == PRESETS["smoke"]["n_envs"]


def test_empty_file_keeps_the_preset(tmp_path):
    path = tmp_path / "train.yaml"
    path.write_text("")

    assert load_train_config(path, preset="smoke") == preset_config("smoke")


@pytest.mark.parametrize(
    "text",
    ["lr: [unclosed", "- just\n- a list\n", "lr: not-a-number\n"],
    ids=["bad-yaml", "not-a-mapping", "bad-value"],
)
def test_malformed_files_name_the_source(tmp_path, text):
    path = tmp_path / "train.yaml"
    path.write_text(text)

    with pytest.raises(MalformedConfigError, match="train.yaml"):
        load_train_config(path)


def test_config_path_precedence(tmp_path, monkeypatch, mocker):
    explicit = tmp_path / "explicit.yaml"
    from_env = tmp_path / "env.yaml"
    user = tmp_path / "user.yaml"
    mocker.patch("packbench.config.CONFIG_PATH", user)

    assert resolve_config_path(None) is None

    user.write_text("seed: 1\n")
    assert resolve_config_path(None) == user

    monkeypatch.setenv("PACKBENCH_CONFIG", str(from_env))
    assert resolve_config_path(None) == from_env
    assert resolve_config_path(explicit) == explicit


def test_user_config_is_read_when_present(mocker, tmp_path):
    user = tmp_path / "config.yaml"
    user.write_text("seed: 42\n")
    mocker.patch("packbench.config.CONFIG_PATH", user)

    assert load_train_config(preset="smoke").seed == 42


def test_config_dir_follows_xdg(monkeypatch, tmp_path):
    monkeypatch.setenv("XDG_CONFIG_HOME", str(tmp_path))
    assert config_module._get_config_dir() == tmp_path / "packbench"

    monkeypatch.delenv("XDG_CONFIG_HOME")
    assert config_module._get_config_dir() == Path.home() / ".config" / "packbench"
