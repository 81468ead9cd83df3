"""Shared fixtures for the packbench test suite."""

from __future__ import annotations

import json
import logging
from pathlib import Path

import numpy as np
import pytest
from typer.testing import CliRunner

from packbench.bin import BinDims, Heightmap, ItemDims, Orientation, Placement, place_item
from packbench.config import PolicyConfig, TrainConfig
from packbench.env import PackState, item_observation
from packbench.placement import build_bin_state
from packbench.policy.network import PolicyParams


@pytest.fixture(autouse=True)
def isolated_config(mocker, monkeypatch, tmp_path):
    """Keep the user's config file and environment out of every test."""
    monkeypatch.delenv("PACKBENCH_CONFIG", raising=False)
    monkeypatch.delenv("PACKBENCH_LOG_LEVEL", raising=False)
    mocker.patch("packbench.config.CONFIG_PATH", tmp_path / "xdg" / "packbench" / "config.yaml")


@pytest.fixture(autouse=True)
def reset_packbench_logger():
    """Undo the CLI's handler installation so caplog keeps working."""
    yield
    logger = logging.getLogger("packbench")
    logger.handlers.clear()
    logger.setLevel(logging.NOTSET)
    logger.propagate = True


@pytest.fixture
def bin10() -> BinDims:
    return BinDims.cube(10)


@pytest.fixture
def block_scene(bin10) -> Heightmap:
    """A 3x3x2 block at the origin of an empty Bin-10."""
    return place_item(Heightmap.empty(bin10), Placement(ItemDims(3, 3, 2), 0, 0, 0))


@pytest.fixture
def two_item_scene(bin10) -> Heightmap:
    """A 3x6x3 item at the origin and a 3x3x2 item next to it along X."""
    hm = place_item(Heightmap.empty(bin10), Placement(ItemDims(3, 6, 3), 0, 0, 0))
    return place_item(hm, Placement(ItemDims(3, 3, 2), 3, 0, 0))


@pytest.fixture
def make_state():
    """Build a PackState for an item on a heightmap."""

    def build(hm: Heightmap, item: ItemDims, capacity: int = 80) -> PackState:
        ems_set, mask = build_bin_state(hm, item, capacity)
        return PackState(item_observation(item, hm.dims), ems_set, mask)

    return build


@pytest.fixture
def tiny_policy() -> PolicyConfig:
    return PolicyConfig(embed_dim=8, blocks=1)


@pytest.fixture
def tiny_params(tiny_policy) -> PolicyParams:
    return PolicyParams.init(tiny_policy, seed=0)


@pytest.fixture
def tiny_train_config(tmp_path, tiny_policy) -> TrainConfig:
    return TrainConfig(
        n_envs=2,
        steps_per_update=5,
        batch_size=4,
        epochs=1,
        steps_per_epoch=20,
        ppo_epochs=1,
        checkpoint_every=1,
        ems_cap=16,
        out_dir=tmp_path / "run",
        policy=tiny_policy,
    )


@pytest.fixture
def runner() -> CliRunner:
    return CliRunner()


@pytest.fixture
def random_scenes():
    """Heightmaps reached by packing random feasible placements."""

    def build(count: int, dims: BinDims, seed: int = 0, max_items: int = 12) -> list[Heightmap]:
        rng = np.random.default_rng(seed)
        scenes = []
        for _ in range(count):
            hm = Heightmap.empty(dims)
            for _ in range(int(rng.integers(0, max_items + 1))):
                item = ItemDims(*(int(v) for v in rng.integers(1, 4, size=3)))
                ems_set, mask = build_bin_state(hm, item)
                actions = np.flatnonzero(mask.flat())
                if actions.size == 0:
                    break
                action = int(actions[rng.integers(actions.size)])
                ems = ems_set.denormalize(action % ems_set.capacity)
                hm = place_item(hm, Placement(item, *ems.flb, Orientation(action // ems_set.capacity)))
            scenes.append(hm)
        return scenes

    return build


def error_line(output: str) -> dict:
    """Return the last JSON error line printed by the CLI."""
    for line in reversed(output.splitlines()):
        if line.startswith("{"):
            return json.loads(line)
    raise AssertionError(f"no JSON error line in output:\n{output}")


def write_lines(path: Path, lines: list[str]) -> Path:
    path.write_text("\n".join(lines) + "\n")
    return path
