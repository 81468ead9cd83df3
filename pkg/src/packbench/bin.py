"""Discrete bin geometry on an integer heightmap.

The bin is an ``L x W x H`` grid of unit cells whose observable state is the
heightmap: the stacked height of every ``(x, y)`` column. Items are cuboids
placed upright in one of two in-plane orientations with their front-left-bottom
(FLB) vertex on a cell corner. Free space is described by empty maximal spaces
(EMSs): maximal free rectangles per height level, lifted to the ceiling.

All values here are immutable; operations return new states.
"""

from __future__ import annotations

import logging
from collections.abc import Sequence
from dataclasses import dataclass
from enum import IntEnum

import numpy as np
from numpy.typing import NDArray
from scipy.spatial import ConvexHull, QhullError

from packbench.errors import DomainError, InfeasiblePlacementError


logger = logging.getLogger(__name__)

HULL_TOLERANCE = 1e-9

_UNIT_SQUARE = np.array([[0, 0], [1, 0], [0, 1], [1, 1]], dtype=np.int64)


def _require_positive(name: str, value: int) -> None:
    if not isinstance(value, int | np.integer) or isinstance(value, bool) or value < 1:
        raise DomainError(f"{name} must be a positive integer, got {value!r}")


@dataclass(frozen=True, slots=True)
class BinDims:
    """Bin size in cells along X (length), Y (width) and Z (height)."""

    length: int
    width: int
    height: int

    def __post_init__(self) -> None:
        """Validate that every dimension is a positive integer."""
        _require_positive("bin length", self.length)
        _require_positive("bin width", self.width)
        _require_positive("bin height", self.height)

    @classmethod
    def cube(cls, edge: int) -> BinDims:
        """Build the cubic ``Bin-k`` environment.

        Args:
            edge: Edge length in cells.

        Returns:
            Cubic bin dimensions.
        """
        return cls(edge, edge, edge)

    @property
    def volume(self) -> int:
        """Number of unit cells in the bin."""
        return self.length * self.width * self.height

    @property
    def shortest(self) -> int:
        """Smallest of the three dimensions."""
        return min(self.length, self.width, self.height)

    def as_tuple(self) -> tuple[int, int, int]:
        """Return ``(L, W, H)``."""
        return (self.length, self.width, self.height)

    def scaled(self, factor: int) -> BinDims:
        """Return the bin scaled by an integer factor.

        Args:
            factor: Positive integer scale.

        Returns:
            Scaled bin dimensions.
        """
        _require_positive("scale factor", factor)
        return BinDims(self.length * factor, self.width * factor, self.height * factor)

    def __str__(self) -> str:
        return f"{self.length}x{self.width}x{self.height}"


class Orientation(IntEnum):
    """Vertical in-plane rotation of an item; the value is the action-row index."""

    DEG_0 = 0
    DEG_90 = 1

    @property
    def degrees(self) -> int:
        """Rotation angle in degrees."""
        return 90 * self.value


@dataclass(frozen=True, slots=True)
class ItemDims:
    """Item size in cells."""

    length: int
    width: int
    height: int

    def __post_init__(self) -> None:
        """Validate that every dimension is a positive integer."""
        _require_positive("item length", self.length)
        _require_positive("item width", self.width)
        _require_positive("item height", self.height)

    @property
    def volume(self) -> int:
        """Item volume in unit cells."""
        return self.length * self.width * self.height

    def oriented(self, orientation: Orientation | int) -> tuple[int, int, int]:
        """Return ``(l', w', h')`` for the given orientation.

        Args:
            orientation: ``Orientation.DEG_0`` keeps ``(l, w, h)``; ``DEG_90`` swaps ``l`` and ``w``.

        Returns:
            Oriented dimensions.
        """
        if Orientation(orientation) is Orientation.DEG_90:
            return (self.width, self.length, self.height)
        return (self.length, self.width, self.height)

    def as_tuple(self) -> tuple[int, int, int]:
        """Return ``(l, w, h)``."""
        return (self.length, self.width, self.height)

    def scaled(self, factor: int) -> ItemDims:
        """Return the item scaled by an integer factor.

        Args:
            factor: Positive integer scale.

        Returns:
            Scaled item dimensions.
        """
        _require_positive("scale factor", factor)
        return ItemDims(self.length * factor, self.width * factor, self.height * factor)


@dataclass(frozen=True, slots=True)
class Ems:
    """Empty maximal space given by its FLB vertex and exclusive opposite vertex."""

    flb: tuple[int, int, int]
    opp: tuple[int, int, int]

    @property
    def extent(self) -> tuple[int, int, int]:
        """Size of the space along X, Y and Z."""
        return (self.opp[0] - self.flb[0], self.opp[1] - self.flb[1], self.opp[2] - self.flb[2])

    @property
    def volume(self) -> int:
        """Volume of the space in unit cells."""
        ex, ey, ez = self.extent
        return ex * ey * ez

    def scaled(self, factor: int) -> Ems:
        """Return the space scaled by an integer factor.

        Args:
            factor: Positive integer scale.

        Returns:
            Scaled space.
        """
        x1, y1, z1 = self.flb
        x2, y2, z2 = self.opp
        return Ems((x1 * factor, y1 * factor, z1 * factor), (x2 * factor, y2 * factor, z2 * factor))


@dataclass(frozen=True, slots=True)
class Placement:
    """An item put at FLB cell ``(x, y, z)`` in a given orientation."""

    item: ItemDims
    x: int
    y: int
    z: int
    orientation: Orientation = Orientation.DEG_0

    @property
    def dims(self) -> tuple[int, int, int]:
        """Oriented dimensions ``(l', w', h')``."""
        return self.item.oriented(self.orientation)

    def fits(self, dims: BinDims) -> bool:
        """Check the bin-boundary invariant ``x + l' <= L``, ``y + w' <= W``, ``z + h' <= H``.

        Args:
            dims: Bin to check against.

        Returns:
            True if the oriented item lies inside the bin.
        """
        lo, wo, ho = self.dims
        return (
            0 <= self.x
            and 0 <= self.y
            and 0 <= self.z
            and self.x + lo <= dims.length
            and self.y + wo <= dims.width
            and self.z + ho <= dims.height
        )


@dataclass(frozen=True, slots=True, eq=False)
class Heightmap:
    """``L x W`` grid of stacked heights, indexed ``cells[x, y]``."""

    dims: BinDims
    cells: NDArray[np.int64]

    def __post_init__(self) -> None:
        """Validate shape and height range, then freeze the cell array.

        Raises:
            DomainError: If the grid shape does not match the bin or a height is out of ``[0, H]``.
        """
        cells = np.array(self.cells, dtype=np.int64, copy=True)
        if cells.shape != (self.dims.length, self.dims.width):
            raise DomainError(f"heightmap shape {cells.shape} does not match bin {self.dims}")
        if cells.size and (cells.min() < 0 or cells.max() > self.dims.height):
            raise DomainError(f"heightmap values must lie in [0, {self.dims.height}]")
        cells.flags.writeable = False
        object.__setattr__(self, "cells", cells)

    @classmethod
    def empty(cls, dims: BinDims) -> Heightmap:
        """Return the heightmap of an empty bin.

        Args:
            dims: Bin dimensions.

        Returns:
            All-zero heightmap.
        """
        return cls(dims, np.zeros((dims.length, dims.width), dtype=np.int64))

    @classmethod
    def from_rows(cls, rows: Sequence[Sequence[int]], height: int) -> Heightmap:
        """Build a heightmap from rows listed per Y, as in a dump.

        Args:
            rows: One sequence of heights along X per Y row.
            height: Bin height ``H``.

        Returns:
            Heightmap with ``cells[x, y] == rows[y][x]``.
        """
        grid = np.array(rows, dtype=np.int64).T
        return cls(BinDims(grid.shape[0], grid.shape[1], height), grid)

    @classmethod
    def parse(cls, text: str, height: int) -> Heightmap:
        """Parse a debug dump produced by :meth:`dump`.

        Args:
            text: One line per Y row, space-separated heights along X.
            height: Bin height ``H`` (not recorded in the dump).

        Returns:
            Parsed heightmap.

        Raises:
            DomainError: If the rows are ragged or empty.
        """
        rows = [line.split() for line in text.strip().splitlines() if line.strip()]
        if not rows or len({len(row) for row in rows}) != 1:
            raise DomainError("heightmap dump must be a non-empty rectangular grid")
        return cls.from_rows([[int(v) for v in row] for row in rows], height)

    def dump(self) -> str:
        """Render the grid as text, one row per Y, space-separated.

        Returns:
            Dump text ending with a newline.
        """
        lines = [" ".join(str(int(v)) for v in self.cells[:, y]) for y in range(self.dims.width)]
        return "\n".join(lines) + "\n"

    def total(self) -> int:
        """Volume under the height surface (sum of all cells)."""
        return int(self.cells.sum())

    def scaled(self, factor: int) -> Heightmap:
        """Return the heightmap of the same scene scaled by an integer factor.

        Args:
            factor: Positive integer scale.

        Returns:
            Scaled heightmap.
        """
        grid = np.repeat(np.repeat(self.cells, factor, axis=0), factor, axis=1) * factor
        return Heightmap(self.dims.scaled(factor), grid)

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, Heightmap):
            return NotImplemented
        return self.dims == other.dims and bool(np.array_equal(self.cells, other.cells))

    def __hash__(self) -> int:
        return hash((self.dims, self.cells.tobytes()))


def drop_height(hm: Heightmap, x: int, y: int, length: int, width: int) -> int:
    """Return the resting elevation of a footprint: the maximum height below it.

    Args:
        hm: Current heightmap.
        x: Footprint FLB cell along X.
        y: Footprint FLB cell along Y.
        length: Footprint extent along X.
        width: Footprint extent along Y.

    Returns:
        Resting height ``z``.

    Raises:
        DomainError: If the footprint leaves the grid.
    """
    if length < 1 or width < 1 or x < 0 or y < 0 or x + length > hm.dims.length or y + width > hm.dims.width:
        raise DomainError(f"footprint ({x}, {y}, {length}, {width}) is outside the {hm.dims} bin")
    return int(hm.cells[x : x + length, y : y + width].max())


def check_stability(hm: Heightmap, placement: Placement) -> bool:
    """Check static stability of a placement resting on the heightmap.

    A placement is stable on the floor, or when the projection of its bottom
    centre lies in the closed convex hull of the unit squares that touch its
    bottom face, and that hull has positive area.

    Args:
        hm: Heightmap before the placement.
        placement: Placement with ``z`` equal to its drop height.

    Returns:
        True if the item would stay put.
    """
    length, width, _ = placement.dims
    if not placement.fits(hm.dims):
        return False
    footprint = hm.cells[placement.x : placement.x + length, placement.y : placement.y + width]
    if int(footprint.max()) != placement.z:
        return False
    if placement.z == 0:
        return True

    support = np.argwhere(footprint == placement.z)
    if len(support) == footprint.size:
        return True

    centre = np.array([length / 2.0, width / 2.0])
    inside_cell = (support <= centre) & (centre <= support + 1)
    if inside_cell.all(axis=1).any():
        return True

    corners = np.unique((support[:, None, :] + _UNIT_SQUARE[None, :, :]).reshape(-1, 2), axis=0)
    try:
        hull = ConvexHull(corners.astype(np.float64))
    except QhullError:
        return False
    if hull.volume <= 0.0:
        return False
    offsets = hull.equations[:, :2] @ centre + hull.equations[:, 2]
    return bool(np.all(offsets <= HULL_TOLERANCE))


def check_feasible(hm: Heightmap, ems: Ems, item: ItemDims, orientation: Orientation | int) -> bool:
    """Check whether an item fits an EMS at its FLB vertex and rests stably there.

    Args:
        hm: Current heightmap.
        ems: Candidate space.
        item: Incoming item.
        orientation: Item orientation.

    Returns:
        True if the oriented item fits the space, stays under the ceiling,
        rests at the space's FLB height and is statically stable.
    """
    length, width, height = item.oriented(orientation)
    ex, ey, _ = ems.extent
    x, y, z = ems.flb
    if length > ex or width > ey or height > hm.dims.height - z:
        return False
    if x + length > hm.dims.length or y + width > hm.dims.width:
        return False
    if drop_height(hm, x, y, length, width) != z:
        return False
    return check_stability(hm, Placement(item, x, y, z, Orientation(orientation)))


def place_item(hm: Heightmap, placement: Placement) -> Heightmap:
    """Apply a placement and return the new heightmap.

    Args:
        hm: Heightmap before the placement.
        placement: Placement to apply.

    Returns:
        Heightmap with the footprint raised to ``z + h'``.

    Raises:
        InfeasiblePlacementError: If the placement leaves the bin, does not rest
            at its drop height, or is unstable. The input heightmap is unchanged.
    """
    length, width, height = placement.dims
    if not placement.fits(hm.dims):
        raise InfeasiblePlacementError(f"placement {placement} does not fit the {hm.dims} bin")
    resting = drop_height(hm, placement.x, placement.y, length, width)
    if resting != placement.z:
        raise InfeasiblePlacementError(f"placement at z={placement.z} would rest at z={resting}")
    if not check_stability(hm, placement):
        raise InfeasiblePlacementError(f"placement {placement} is not statically stable")

    cells = hm.cells.copy()
    cells[placement.x : placement.x + length, placement.y : placement.y + width] = placement.z + height
    return Heightmap(hm.dims, cells)


def find_corner_points(hm: Heightmap) -> list[tuple[int, int, int]]:
    """Detect corner points of the heightmap.

    A cell is a corner when its height is below the ceiling and both its ``-X``
    and ``-Y`` neighbours (walls count as infinitely high) are strictly higher.

    Args:
        hm: Current heightmap.

    Returns:
        Corner points ``(x, y, z)`` in ascending ``(x, y)`` order.
    """
    cells = hm.cells
    wall = hm.dims.height + 1
    left = np.empty_like(cells)
    left[0, :] = wall
    left[1:, :] = cells[:-1, :]
    front = np.empty_like(cells)
    front[:, 0] = wall
    front[:, 1:] = cells[:, :-1]
    is_corner = (left > cells) & (front > cells) & (cells < hm.dims.height)
    return [(int(x), int(y), int(cells[x, y])) for x, y in np.argwhere(is_corner)]


def _spans(depth: list[int]) -> tuple[list[int], list[int]]:
    """Widest span around each column whose depths are all at least the column's own.

    Args:
        depth: Free-run depth per column.

    Returns:
        Inclusive start and exclusive end of every column's span.
    """
    width = len(depth)
    low, high = [0] * width, [width] * width
    stack: list[int] = []
    for y in range(width):
        while stack and depth[stack[-1]] >= depth[y]:
            stack.pop()
        low[y] = stack[-1] + 1 if stack else 0
        stack.append(y)
    stack = []
    for y in reversed(range(width)):
        while stack and depth[stack[-1]] >= depth[y]:
            stack.pop()
        high[y] = stack[-1] if stack else width
        stack.append(y)
    return low, high


def _maximal_rectangles(free: NDArray[np.bool_]) -> list[tuple[int, int, int, int]]:
    """List every maximal all-free rectangle of a boolean grid.

    Rows are scanned along X while tracking, per Y column, how many free cells
    end at the current row. A column's span at its own depth is maximal in Y
    and toward ``-X``; it is kept unless the next row extends it.

    Args:
        free: Boolean grid, True where a cell is low enough.

    Returns:
        Distinct ``(x1, y1, x2, y2)`` rectangles with exclusive upper corners.
    """
    length, width = free.shape
    depth = [0] * width
    found: dict[tuple[int, int, int, int], None] = {}
    for x in range(length):
        row = free[x].tolist()
        depth = [d + 1 if cell else 0 for d, cell in zip(depth, row, strict=True)]
        low, high = _spans(depth)
        for y in range(width):
            if not depth[y]:
                continue
            rect = (x + 1 - depth[y], low[y], x + 1, high[y])
            if rect in found:
                continue
            if x + 1 < length and free[x + 1, low[y] : high[y]].all():
                continue
            found[rect] = None
    return list(found)


def generate_ems(hm: Heightmap) -> list[Ems]:
    """Enumerate the empty maximal spaces of the heightmap.

    For every height level below the ceiling, each maximal rectangle of cells
    no higher than the level, and reaching it somewhere, becomes a box from the
    level up to the ceiling. This covers every space grown from a corner point
    and also free regions that no corner point touches.

    Args:
        hm: Current heightmap.

    Returns:
        Distinct EMSs by ascending level.
    """
    cells = hm.cells
    spaces: dict[Ems, None] = {}
    for level in np.unique(cells[cells < hm.dims.height]).tolist():
        for x1, y1, x2, y2 in _maximal_rectangles(cells <= level):
            if cells[x1:x2, y1:y2].max() == level:
                spaces.setdefault(Ems((x1, y1, level), (x2, y2, hm.dims.height)))
    logger.debug("Generated %d EMSs on a %s bin", len(spaces), hm.dims)
    return list(spaces)
