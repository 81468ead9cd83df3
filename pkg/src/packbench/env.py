"""Online packing environment: state assembly, transitions, rewards and item sources."""

from __future__ import annotations

import functools
import itertools
import logging
from collections.abc import Sequence
from dataclasses import dataclass, field
from enum import StrEnum
from typing import Protocol

import numpy as np
from numpy.typing import NDArray

from packbench.bin import BinDims, Heightmap, ItemDims, Placement, place_item
from packbench.errors import DomainError, MaskedActionError
from packbench.placement import (
    DEFAULT_EMS_CAPACITY,
    ActionMask,
    EmsSet,
    action_to_placement,
    build_bin_state,
)


logger = logging.getLogger(__name__)

TYPE_STEPS = (1, 2, 3, 4, 5)


class RewardMode(StrEnum):
    """How utilization gains are paid out over an episode."""

    STEP_WISE = "step_wise"
    TERMINAL = "terminal"


def item_types(dims: BinDims) -> list[ItemDims]:
    """Return the 125 RS item types for a bin.

    Each dimension takes one of five values between ``min(L, W, H) / 10`` and
    ``min(L, W, H) / 2`` in steps of ``min(L, W, H) / 10``.

    Args:
        dims: Bin dimensions; the smallest must be divisible by 10.

    Returns:
        Item types in lexicographic ``(l, w, h)`` order.

    Raises:
        DomainError: If ``min(L, W, H)`` is not a multiple of 10.
    """
    if dims.shortest % 10:
        raise DomainError(f"RS items need min(L, W, H) divisible by 10, got {dims}")
    unit = dims.shortest // 10
    return [ItemDims(a * unit, b * unit, c * unit) for a, b, c in itertools.product(TYPE_STEPS, repeat=3)]


@functools.cache
def _type_pool(dims: BinDims) -> tuple[ItemDims, ...]:
    return tuple(item_types(dims))


def sample_item(rng: np.random.Generator, dims: BinDims, types: Sequence[ItemDims] | None = None) -> ItemDims:
    """Draw one RS item uniformly over the allowed types.

    Over the full type list this draws each dimension independently and
    uniformly. Because the type list of a scaled bin is the scaled Bin-10 list
    in the same order, one seed yields the same sequence at every scale.

    Args:
        rng: Random generator.
        dims: Bin dimensions.
        types: Allowed types; defaults to all 125.

    Returns:
        Sampled item.
    """
    pool = types if types is not None else _type_pool(dims)
    return pool[int(rng.integers(len(pool)))]


def item_observation(item: ItemDims, dims: BinDims) -> NDArray[np.float64]:
    """Build the ``2 x 3`` item matrix, both orientations normalized by the bin size.

    Args:
        item: Incoming item.
        dims: Bin dimensions.

    Returns:
        Rows ``(l, w, h)`` and ``(w, l, h)`` divided by ``(L, W, H)``.
    """
    scale = np.array(dims.as_tuple(), dtype=np.float64)
    obs = np.array([item.as_tuple(), (item.width, item.length, item.height)], dtype=np.float64) / scale
    obs.flags.writeable = False
    return obs


def _fits_empty_bin(item: ItemDims, dims: BinDims) -> bool:
    if item.height > dims.height:
        return False
    straight = item.length <= dims.length and item.width <= dims.width
    turned = item.width <= dims.length and item.length <= dims.width
    return straight or turned


@dataclass(frozen=True, slots=True, eq=False)
class PackState:
    """MDP observation: item matrix, candidate spaces and action mask."""

    item: NDArray[np.float64]
    bin: EmsSet
    mask: ActionMask


class ItemSource(Protocol):
    """Supplies the next incoming item, or None when the stream is exhausted."""

    def next_item(self, rng: np.random.Generator) -> ItemDims | None: ...


@dataclass(slots=True)
class TypeSampler:
    """Bootstrap sampling from a type list (training mode)."""

    dims: BinDims
    types: tuple[ItemDims, ...] | None = None

    def next_item(self, rng: np.random.Generator) -> ItemDims | None:
        """Draw an item.

        Args:
            rng: Episode random generator.

        Returns:
            Sampled item.
        """
        return sample_item(rng, self.dims, self.types)


@dataclass(slots=True)
class SequenceSource:
    """Replays a fixed item sequence (evaluation mode)."""

    items: tuple[ItemDims, ...]
    cursor: int = 0

    def next_item(self, rng: np.random.Generator) -> ItemDims | None:
        """Return the next item of the sequence.

        Args:
            rng: Unused; kept for the common interface.

        Returns:
            Next item, or None at the end of the sequence.
        """
        if self.cursor >= len(self.items):
            return None
        item = self.items[self.cursor]
        self.cursor += 1
        return item


@dataclass(frozen=True, slots=True)
class EpisodeConfig:
    """Static settings of an environment instance."""

    dims: BinDims = field(default_factory=lambda: BinDims.cube(10))
    ems_capacity: int = DEFAULT_EMS_CAPACITY
    reward_mode: RewardMode = RewardMode.STEP_WISE
    seed: int | None = None
    types: tuple[ItemDims, ...] | None = None
    sequence: tuple[ItemDims, ...] | None = None

    def __post_init__(self) -> None:
        """Validate the capacity and item bounds.

        Raises:
            DomainError: If the capacity is below one or a sequence item cannot fit the bin.
        """
        if self.ems_capacity < 1:
            raise DomainError(f"EMS capacity must be at least 1, got {self.ems_capacity}")
        for item in self.sequence or ():
            if not _fits_empty_bin(item, self.dims):
                raise DomainError(f"item {item.as_tuple()} can never fit the {self.dims} bin")

    def make_source(self) -> ItemSource:
        """Create a fresh item source for one episode."""
        if self.sequence is not None:
            return SequenceSource(self.sequence)
        return TypeSampler(self.dims, self.types)


@dataclass(frozen=True, slots=True)
class StepResult:
    """Outcome of one environment step."""

    state: PackState
    reward: float
    done: bool


class PackingEnv:
    """Single-bin online packing MDP.

    Each instance is owned by one thread. ``reset`` starts an episode with an
    empty bin and the first item; ``step`` packs the current item and draws the
    next. The episode ends when the next item has no feasible placement or a
    fixed sequence runs out.
    """

    def __init__(self, config: EpisodeConfig) -> None:
        """Create an environment; call :meth:`reset` before stepping.

        Args:
            config: Episode settings.
        """
        self.config = config
        self._rng = np.random.default_rng(config.seed)
        self._source: ItemSource = config.make_source()
        self.heightmap = Heightmap.empty(config.dims)
        self.item: ItemDims | None = None
        self.state: PackState | None = None
        self.placements: list[Placement] = []
        self.packed_volume = 0
        self.done = True

    def reset(self, seed: int | None = None) -> PackState:
        """Start a new episode.

        Args:
            seed: Reseeds the item stream when given; otherwise the stream continues.

        Returns:
            Initial state with an empty bin.
        """
        if seed is not None:
            self._rng = np.random.default_rng(seed)
        self._source = self.config.make_source()
        self.heightmap = Heightmap.empty(self.config.dims)
        self.placements = []
        self.packed_volume = 0
        self.item = self._source.next_item(self._rng)
        self.state = self._observe()
        self.done = not self.state.mask.any()
        return self.state

    def step(self, action: int) -> StepResult:
        """Pack the current item with a mask-valid action.

        Args:
            action: Flat action index.

        Returns:
            Next state, reward and termination flag.

        Raises:
            DomainError: If the episode is over.
            MaskedActionError: If the action is not mask-valid.
        """
        if self.done or self.state is None or self.item is None:
            raise DomainError("episode is over; call reset() first")
        if not self.state.mask.allows(action):
            raise MaskedActionError(f"action {action} is not feasible for item {self.item.as_tuple()}")

        placement = action_to_placement(action, self.state.bin, self.item, self.state.mask)
        self.heightmap = place_item(self.heightmap, placement)
        self.placements.append(placement)
        self.packed_volume += self.item.volume
        gain = self.item.volume / self.config.dims.volume

        self.item = self._source.next_item(self._rng)
        self.state = self._observe()
        self.done = not self.state.mask.any()

        if self.config.reward_mode is RewardMode.TERMINAL:
            reward = self.utilization() if self.done else 0.0
        else:
            reward = gain
        if self.done:
            logger.debug("Episode done: %d items, utilization %.4f", self.packed_count(), self.utilization())
        return StepResult(self.state, reward, self.done)

    def utilization(self) -> float:
        """Packed item volume over bin volume."""
        return self.packed_volume / self.config.dims.volume

    def packed_count(self) -> int:
        """Number of items placed in the current episode."""
        return len(self.placements)

    def _observe(self) -> PackState:
        dims = self.config.dims
        if self.item is None:
            ems_set, mask = build_bin_state(self.heightmap, ItemDims(1, 1, 1), self.config.ems_capacity)
            closed = np.zeros_like(mask.grid)
            closed.flags.writeable = False
            empty_item = np.zeros((2, 3), dtype=np.float64)
            empty_item.flags.writeable = False
            return PackState(empty_item, ems_set, ActionMask(closed))
        ems_set, mask = build_bin_state(self.heightmap, self.item, self.config.ems_capacity)
        return PackState(item_observation(self.item, dims), ems_set, mask)
