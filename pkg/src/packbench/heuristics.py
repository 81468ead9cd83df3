"""Deterministic baseline policies over the shared EMS candidate set.

Every rule picks among mask-valid (orientation, EMS) pairs only and breaks
ties by the lowest action index.
"""

from __future__ import annotations

from collections.abc import Callable
from dataclasses import dataclass, field
from enum import StrEnum
from typing import TYPE_CHECKING, Protocol

import numpy as np

from packbench.bin import Heightmap, ItemDims, place_item
from packbench.errors import NoFeasibleActionError
from packbench.placement import action_to_placement


if TYPE_CHECKING:
    from packbench.env import PackingEnv, PackState


class Policy(Protocol):
    """Anything that can choose actions in a :class:`PackingEnv`."""

    name: str

    def begin_episode(self, seed: int | None) -> None:
        """Prepare for a new episode; stochastic policies reseed here."""
        ...

    def act(self, env: PackingEnv) -> int:
        """Return a mask-valid action for the environment's current state."""
        ...


def _feasible_actions(state: PackState) -> np.ndarray:
    actions = np.flatnonzero(state.mask.flat())
    if actions.size == 0:
        raise NoFeasibleActionError("no feasible placement for the incoming item")
    return actions


def _argmin_first(actions: np.ndarray, scores: list[tuple]) -> int:
    best = min(range(len(actions)), key=lambda i: (scores[i], int(actions[i])))
    return int(actions[best])


def online_bph(state: PackState, hm: Heightmap, item: ItemDims) -> int:
    """Pick the EMS whose faces lie closest to the item's faces.

    The margin is the sum over X, Y and Z of the EMS extent minus the oriented
    item extent.

    Args:
        state: Current state.
        hm: Current heightmap.
        item: Incoming item.

    Returns:
        Action with the smallest total margin.
    """
    actions = _feasible_actions(state)
    scores = []
    for action in actions:
        placement = action_to_placement(int(action), state.bin, item)
        ems = state.bin.denormalize(int(action) % state.bin.capacity)
        ex, ey, ez = ems.extent
        lo, wo, ho = placement.dims
        scores.append(((ex - lo) + (ey - wo) + (ez - ho),))
    return _argmin_first(actions, scores)


def best_fit_ep(state: PackState, hm: Heightmap, item: ItemDims) -> int:
    """Pack into the lowest candidate point, EMS FLB vertices serving as extreme points.

    Args:
        state: Current state.
        hm: Current heightmap.
        item: Incoming item.

    Returns:
        Action with minimal ``(z, x, y)``, 0 degrees before 90 degrees.
    """
    actions = _feasible_actions(state)
    scores = []
    for action in actions:
        placement = action_to_placement(int(action), state.bin, item)
        scores.append((placement.z, placement.x, placement.y, int(placement.orientation)))
    return _argmin_first(actions, scores)


def heightmap_min(state: PackState, hm: Heightmap, item: ItemDims) -> int:
    """Pick the placement that raises the volume under the height surface the least.

    Args:
        state: Current state.
        hm: Current heightmap.
        item: Incoming item.

    Returns:
        Action with the smallest heightmap-sum increase.
    """
    actions = _feasible_actions(state)
    before = hm.total()
    scores = []
    for action in actions:
        placement = action_to_placement(int(action), state.bin, item)
        scores.append((place_item(hm, placement).total() - before,))
    return _argmin_first(actions, scores)


def random_masked(state: PackState, rng: np.random.Generator) -> int:
    """Pick uniformly among mask-valid actions.

    Args:
        state: Current state.
        rng: Random generator.

    Returns:
        Sampled action.
    """
    actions = _feasible_actions(state)
    return int(actions[int(rng.integers(actions.size))])


class HeuristicKind(StrEnum):
    """Built-in heuristic policies."""

    ONLINE_BPH = "online_bph"
    BEST_FIT = "best_fit"
    HEIGHTMAP_MIN = "heightmap_min"
    RANDOM = "random"


_RULES: dict[HeuristicKind, Callable[[PackState, Heightmap, ItemDims], int]] = {
    HeuristicKind.ONLINE_BPH: online_bph,
    HeuristicKind.BEST_FIT: best_fit_ep,
    HeuristicKind.HEIGHTMAP_MIN: heightmap_min,
}


@dataclass(slots=True)
class HeuristicPolicy:
    """Adapter exposing a heuristic rule through the :class:`Policy` interface."""

    kind: HeuristicKind
    seed: int | None = None
    _rng: np.random.Generator = field(init=False, repr=False)

    def __post_init__(self) -> None:
        """Seed the generator used by the random rule."""
        self._rng = np.random.default_rng(self.seed)

    @property
    def name(self) -> str:
        """Policy name as used in reports."""
        return self.kind.value

    def begin_episode(self, seed: int | None) -> None:
        """Reseed the random rule; deterministic rules ignore this.

        Args:
            seed: Episode seed.
        """
        if seed is not None:
            self._rng = np.random.default_rng(seed)

    def act(self, env: PackingEnv) -> int:
        """Choose an action for the environment's current state.

        Args:
            env: Environment with an active episode.

        Returns:
            Mask-valid action.

        Raises:
            NoFeasibleActionError: If the episode has no current state.
        """
        if env.state is None or env.item is None:
            raise NoFeasibleActionError("environment has no active episode")
        if self.kind is HeuristicKind.RANDOM:
            return random_masked(env.state, self._rng)
        return _RULES[self.kind](env.state, env.heightmap, env.item)
