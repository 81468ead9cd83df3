"""Training and network configuration: pydantic models, YAML files and named presets."""

from __future__ import annotations

import os
from enum import StrEnum
from pathlib import Path
from typing import Annotated, Any

import yaml
from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator

from packbench.bin import BinDims
from packbench.env import RewardMode
from packbench.errors import PackbenchError
from packbench.helpers import atomic_write_text, parse_bin_dims


CONFIG_ENV_VAR = "PACKBENCH_CONFIG"


class MalformedConfigError(PackbenchError):
    """Raised when a config file exists but cannot be parsed or validated."""

    kind = "malformed_config"


def _get_config_dir() -> Path:
    """Get the configuration directory following XDG Base Directory specification.

    Returns:
        Path to configuration directory (~/.config/packbench by default).
    """
    xdg_config_home = os.getenv("XDG_CONFIG_HOME")
    if xdg_config_home:
        return Path(xdg_config_home) / "packbench"
    return Path.home() / ".config" / "packbench"


CONFIG_DIR = _get_config_dir()
CONFIG_PATH = CONFIG_DIR / "config.yaml"


class Ablation(StrEnum):
    """Feature extractor between the encoders and the actor/critic heads."""

    FULL = "full"
    NO_PT = "no_pt"
    MLP_MIXER = "mlp_mixer"


class PolicyConfig(BaseModel):
    """Shape of the actor-critic network; independent of the bin size."""

    model_config = ConfigDict(frozen=True, extra="forbid")

    embed_dim: Annotated[int, Field(gt=0)] = 128
    blocks: Annotated[int, Field(ge=0)] = 3
    heads: Annotated[int, Field(gt=0)] = 1
    ablation: Ablation = Ablation.FULL
    leaky_slope: Annotated[float, Field(ge=0.0, lt=1.0)] = 0.01
    ln_eps: Annotated[float, Field(gt=0.0)] = 1e-5

    @model_validator(mode="after")
    def _heads_divide_width(self) -> PolicyConfig:
        if self.embed_dim % self.heads:
            raise ValueError(f"embed_dim {self.embed_dim} is not divisible by heads {self.heads}")
        return self


class TrainConfig(BaseModel):
    """PPO training run settings.

    Defaults describe a desk-scale run; presets only change the run length and
    the number of environments.
    """

    model_config = ConfigDict(extra="forbid")

    bin: str = "10x10x10"
    ems_cap: Annotated[int, Field(gt=0)] = 80
    reward_mode: RewardMode = RewardMode.STEP_WISE
    item_types: Path | None = None
    n_envs: Annotated[int, Field(gt=0)] = 8
    steps_per_update: Annotated[int, Field(gt=0)] = 16
    batch_size: Annotated[int, Field(gt=0)] = 128
    epochs: Annotated[int, Field(gt=0)] = 50
    steps_per_epoch: Annotated[int, Field(gt=0)] = 40_000
    lr: Annotated[float, Field(gt=0.0)] = 7e-5
    gamma: Annotated[float, Field(gt=0.0, le=1.0)] = 1.0
    gae_lambda: Annotated[float, Field(ge=0.0, le=1.0)] = 0.96
    clip_eps: Annotated[float, Field(gt=0.0, lt=1.0)] = 0.3
    value_coef: Annotated[float, Field(ge=0.0)] = 0.5
    entropy_coef: Annotated[float, Field(ge=0.0)] = 0.001
    ppo_epochs: Annotated[int, Field(gt=0)] = 4
    max_grad_norm: Annotated[float, Field(gt=0.0)] = 0.5
    norm_adv: bool = True
    seed: int = 0
    checkpoint_every: Annotated[int, Field(gt=0)] = 100
    out_dir: Path = Path("runs/latest")
    policy: PolicyConfig = PolicyConfig()

    @field_validator("bin")
    @classmethod
    def _valid_bin(cls, value: str) -> str:
        parse_bin_dims(value)
        return value

    @property
    def dims(self) -> BinDims:
        """Parsed bin dimensions."""
        return parse_bin_dims(self.bin)

    @property
    def total_steps(self) -> int:
        """Environment steps over the whole run."""
        return self.epochs * self.steps_per_epoch

    @property
    def transitions_per_update(self) -> int:
        """Transitions collected between two updates across all environments."""
        return self.n_envs * self.steps_per_update


PRESETS: dict[str, dict[str, Any]] = {
    "smoke": {"n_envs": 2, "steps_per_update": 16, "epochs": 1, "steps_per_epoch": 10_000, "checkpoint_every": 50},
    "desk": {"n_envs": 8, "steps_per_update": 16, "epochs": 50, "steps_per_epoch": 40_000, "checkpoint_every": 100},
    "large": {"n_envs": 128, "steps_per_update": 5, "epochs": 1000, "steps_per_epoch": 40_000, "checkpoint_every": 500},
}
DEFAULT_PRESET = "desk"


def preset_config(name: str) -> TrainConfig:
    """Build a named preset.

    Args:
        name: One of ``smoke``, ``desk`` or ``large``.

    Returns:
        Preset configuration.

    Raises:
        ValueError: If the preset does not exist.
    """
    if name not in PRESETS:
        raise ValueError(f"Unknown preset '{name}'. Available presets: {', '.join(PRESETS)}")
    return TrainConfig.model_validate(PRESETS[name])


def _parse_config_text(text: str, source: Path, base: TrainConfig) -> TrainConfig:
    """Parse raw YAML over a base config into a validated TrainConfig.

    Args:
        text: Raw config file contents.
        source: File the text came from, for error messages.
        base: Config whose values the file overrides.

    Returns:
        Validated TrainConfig.

    Raises:
        MalformedConfigError: If the text is invalid YAML, not a mapping, or fails validation.
    """
    try:
        data = yaml.safe_load(text)
    except yaml.YAMLError as e:
        raise MalformedConfigError(f"config file at {source} is malformed: {e}") from e

    if data is None:
        return base
    if not isinstance(data, dict):
        raise MalformedConfigError(f"config file at {source} must contain a mapping")

    try:
        return apply_overrides(base, data)
    except ValidationError as e:
        raise MalformedConfigError(f"config file at {source} is malformed: {e}") from e


def resolve_config_path(explicit: Path | None) -> Path | None:
    """Pick the config file to read.

    Precedence: explicit ``--config`` path, then ``PACKBENCH_CONFIG``, then the
    user config file if it exists.

    Args:
        explicit: Path given on the command line.

    Returns:
        Config file path, or None to use the preset alone.
    """
    if explicit is not None:
        return explicit

    env_path = os.getenv(CONFIG_ENV_VAR)
    if env_path:
        return Path(env_path)

    if CONFIG_PATH.exists():
        return CONFIG_PATH

    return None


def load_train_config(path: Path | None = None, preset: str = DEFAULT_PRESET) -> TrainConfig:
    """Load a training config: preset values, overridden by the resolved config file.

    Args:
        path: Explicit config file, or None to consult the environment and user config.
        preset: Preset supplying the base values.

    Returns:
        Validated TrainConfig.

    Raises:
        MalformedConfigError: If the config file is corrupted.
    """  # noqa: DOC502
    base = preset_config(preset)
    source = resolve_config_path(path)
    if source is None:
        return base
    return _parse_config_text(source.read_text(), source, base)


def apply_overrides(config: TrainConfig, overrides: dict[str, Any]) -> TrainConfig:
    """Return a copy of ``config`` with some fields replaced and re-validated.

    ``None`` values are ignored so unset CLI flags leave the config alone. A
    nested ``policy`` mapping is merged field by field.

    Args:
        config: Base configuration.
        overrides: Field values to replace.

    Returns:
        Validated configuration.
    """  # noqa: DOC502
    data = config.model_dump()
    for key, value in overrides.items():
        if value is None:
            continue
        if key == "policy" and isinstance(value, dict):
            data["policy"] = {**data["policy"], **value}
        else:
            data[key] = value
    return TrainConfig.model_validate(data)


def dump_config(config: TrainConfig) -> str:
    """Render a config as YAML.

    Args:
        config: Config to render.

    Returns:
        YAML text.
    """
    return yaml.safe_dump(config.model_dump(mode="json"), sort_keys=False)


def save_config(config: TrainConfig, path: Path) -> None:
    """Atomically write a config as YAML.

    Args:
        config: Config to persist.
        path: Destination file.
    """
    atomic_write_text(path, dump_config(config))
