"""Placement generator: the fixed-length, normalized and masked candidate set.

The raw EMS list of a heightmap is ranked, clipped or padded to ``N`` rows,
normalized by the bin size so that it no longer depends on the bin
dimensions, and paired with a ``2 x N`` feasibility mask over
(orientation, EMS). Action ``a`` addresses orientation ``a // N`` and EMS
``a % N``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numpy.typing import NDArray

from packbench.bin import (
    BinDims,
    Ems,
    Heightmap,
    ItemDims,
    Orientation,
    Placement,
    check_feasible,
    generate_ems,
)
from packbench.errors import DomainError, MaskedActionError


DEFAULT_EMS_CAPACITY = 80
ORIENTATIONS = (Orientation.DEG_0, Orientation.DEG_90)


@dataclass(frozen=True, slots=True, eq=False)
class EmsSet:
    """Normalized candidate spaces padded to a fixed capacity.

    Attributes:
        rows: ``N x 6`` array of ``(x1, y1, z1, x2, y2, z2)`` divided by ``(L, W, H)``.
        valid: ``N`` booleans, False for padding rows.
        dims: Bin the rows were normalized against.
    """

    rows: NDArray[np.float64]
    valid: NDArray[np.bool_]
    dims: BinDims

    @property
    def capacity(self) -> int:
        """Fixed number of rows ``N``."""
        return int(self.rows.shape[0])

    def denormalize(self, index: int) -> Ems:
        """Recover the integer EMS stored in a valid row.

        Args:
            index: Row index.

        Returns:
            EMS in cell coordinates.

        Raises:
            DomainError: If the row is padding.
        """
        if not 0 <= index < self.capacity or not self.valid[index]:
            raise DomainError(f"EMS row {index} is not a real space")
        scale = np.array(self.dims.as_tuple() * 2, dtype=np.float64)
        x1, y1, z1, x2, y2, z2 = (int(v) for v in np.rint(self.rows[index] * scale))
        return Ems((x1, y1, z1), (x2, y2, z2))

    def spaces(self) -> list[Ems]:
        """Return the real EMSs in row order."""
        return [self.denormalize(i) for i in range(self.capacity) if self.valid[i]]


@dataclass(frozen=True, slots=True, eq=False)
class ActionMask:
    """Feasibility of every (orientation, EMS) pair, shape ``2 x N``."""

    grid: NDArray[np.bool_]

    @property
    def capacity(self) -> int:
        """Number of EMS columns ``N``."""
        return int(self.grid.shape[1])

    def flat(self) -> NDArray[np.bool_]:
        """Row-major ``2N`` view matching the action index layout."""
        return self.grid.reshape(-1)

    def any(self) -> bool:
        """True if at least one action is feasible."""
        return bool(self.grid.any())

    def allows(self, action: int) -> bool:
        """Check whether an action index is in range and feasible.

        Args:
            action: Flat action index.

        Returns:
            True if the action is mask-valid.
        """
        return 0 <= action < self.grid.size and bool(self.flat()[action])


def _rank_key(ems: Ems) -> tuple[int, int, int, int]:
    x, y, z = ems.flb
    return (z, x, y, -ems.volume)


def normalize_ems(ems: Ems, dims: BinDims) -> NDArray[np.float64]:
    """Divide both EMS vertices component-wise by the bin size.

    Args:
        ems: Space in cell coordinates.
        dims: Bin dimensions.

    Returns:
        Six values in ``[0, 1]``.
    """
    scale = np.array(dims.as_tuple() * 2, dtype=np.float64)
    return np.array(ems.flb + ems.opp, dtype=np.float64) / scale


def build_bin_state(hm: Heightmap, item: ItemDims, capacity: int = DEFAULT_EMS_CAPACITY) -> tuple[EmsSet, ActionMask]:
    """Build the bin half of the MDP state for an incoming item.

    EMSs are ranked by ``(z, x, y, -volume)``, clipped to the lowest
    ``capacity`` entries, normalized and padded with all-zero rows. The mask
    marks every (orientation, EMS) pair that passes :func:`check_feasible`.

    Args:
        hm: Current heightmap.
        item: Incoming item.
        capacity: Fixed number of EMS rows ``N``.

    Returns:
        Tuple of (EMS set, action mask).

    Raises:
        DomainError: If ``capacity`` is below one.
    """
    if capacity < 1:
        raise DomainError(f"EMS capacity must be at least 1, got {capacity}")

    ranked = sorted(generate_ems(hm), key=_rank_key)[:capacity]
    rows = np.zeros((capacity, 6), dtype=np.float64)
    valid = np.zeros(capacity, dtype=np.bool_)
    grid = np.zeros((len(ORIENTATIONS), capacity), dtype=np.bool_)
    for index, ems in enumerate(ranked):
        rows[index] = normalize_ems(ems, hm.dims)
        valid[index] = True
        for orientation in ORIENTATIONS:
            grid[orientation, index] = check_feasible(hm, ems, item, orientation)

    rows.flags.writeable = False
    valid.flags.writeable = False
    grid.flags.writeable = False
    return EmsSet(rows, valid, hm.dims), ActionMask(grid)


def action_to_placement(
    action: int,
    ems_set: EmsSet,
    item: ItemDims,
    mask: ActionMask | None = None,
) -> Placement:
    """Decode a flat action index into a placement at the chosen EMS's FLB vertex.

    Args:
        action: Index in ``[0, 2N)``; orientation major, EMS minor.
        ems_set: Candidate set the action refers to.
        item: Incoming item.
        mask: Optional mask; when given, masked actions are rejected.

    Returns:
        Placement aligned with the EMS's FLB vertex.

    Raises:
        MaskedActionError: If the index is out of range, refers to padding, or is masked out.
    """
    capacity = ems_set.capacity
    if not 0 <= action < len(ORIENTATIONS) * capacity:
        raise MaskedActionError(f"action {action} is outside [0, {len(ORIENTATIONS) * capacity})")
    if mask is not None and not mask.allows(action):
        raise MaskedActionError(f"action {action} is masked out")

    orientation = Orientation(action // capacity)
    index = action % capacity
    try:
        ems = ems_set.denormalize(index)
    except DomainError as e:
        raise MaskedActionError(f"action {action} refers to a padding row") from e
    x, y, z = ems.flb
    return Placement(item, x, y, z, orientation)
