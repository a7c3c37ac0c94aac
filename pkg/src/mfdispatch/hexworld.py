"""Hexagonal grid topology and planar geometry.

Cells are addressed in "odd-r" offset coordinates (pointy-top hexagons, odd
rows shifted right by half a cell) and flattened row-major into integer ids.
Coordinate-mode positions live in the unit square; the square is laid over the
hex tiling so every point belongs to exactly one cell.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np


class DomainError(ValueError):
    """Raised when an operation receives arguments outside its domain."""


_EVEN_ROW_OFFSETS = ((-1, -1), (-1, 0), (0, -1), (0, 1), (1, -1), (1, 0))
_ODD_ROW_OFFSETS = ((-1, 0), (-1, 1), (0, -1), (0, 1), (1, 0), (1, 1))
_SQRT3 = math.sqrt(3.0)


@dataclass(frozen=True)
class Coord:
    x: float
    y: float

    def __post_init__(self):
        if not (0.0 <= self.x <= 1.0 and 0.0 <= self.y <= 1.0):
            raise DomainError(f"coordinate ({self.x}, {self.y}) outside the unit square")


@dataclass(frozen=True)
class HexGrid:
    rows: int
    cols: int
    cell_km: float = 1.2
    _centers: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        if self.rows < 1 or self.cols < 1:
            raise DomainError("grid needs at least one row and one column")
        # Unit hex size; centers in hex space, later normalized by the extent.
        r = np.repeat(np.arange(self.rows), self.cols)
        c = np.tile(np.arange(self.cols), self.rows)
        hx = _SQRT3 * (c + 0.5 * (r & 1) + 0.5)
        hy = 1.5 * r + 1.0
        centers = np.stack([hx / self.width, hy / self.height], axis=1)
        object.__setattr__(self, "_centers", centers)

    @property
    def size(self) -> int:
        return self.rows * self.cols

    @property
    def width(self) -> float:
        # odd rows stick out half a cell to the right
        extra = 0.5 if self.rows > 1 else 0.0
        return _SQRT3 * (self.cols + extra)

    @property
    def height(self) -> float:
        return 1.5 * (self.rows - 1) + 2.0

    @property
    def centers(self) -> np.ndarray:
        """(size, 2) array of normalized cell centers."""
        return self._centers

    def check(self, cell: int) -> int:
        if not isinstance(cell, (int, np.integer)) or not 0 <= cell < self.size:
            raise DomainError(f"cell {cell!r} is not valid for a {self.rows}x{self.cols} grid")
        return int(cell)

    def offset(self, cell: int) -> tuple[int, int]:
        cell = self.check(cell)
        return divmod(cell, self.cols)

    def center(self, cell: int) -> Coord:
        x, y = self._centers[self.check(cell)]
        return Coord(float(x), float(y))


def neighbors(grid: HexGrid, cell: int) -> list[int]:
    """Adjacent cells of ``cell``; between 0 (1x1 grid) and 6 entries."""
    row, col = grid.offset(cell)
    offsets = _ODD_ROW_OFFSETS if row & 1 else _EVEN_ROW_OFFSETS
    out = []
    for dr, dc in offsets:
        r, c = row + dr, col + dc
        if 0 <= r < grid.rows and 0 <= c < grid.cols:
            out.append(r * grid.cols + c)
    return out


def _cube(grid: HexGrid, cell: int) -> tuple[int, int, int]:
    row, col = grid.offset(cell)
    x = col - (row - (row & 1)) // 2
    z = row
    return x, -x - z, z


def hex_steps(grid: HexGrid, a: int, b: int) -> int:
    """Number of hex moves between two cells."""
    ax, ay, az = _cube(grid, a)
    bx, by, bz = _cube(grid, b)
    return max(abs(ax - bx), abs(ay - by), abs(az - bz))


def distance(a, b, grid: HexGrid | None = None, map_width_km: float = 10.0) -> float:
    """Travel distance in kilometers between two locations of the same mode.

    Grid-mode locations are integer cell ids and need ``grid``; coordinate-mode
    locations are :class:`Coord` and are scaled by ``map_width_km``.
    """
    a_grid = isinstance(a, (int, np.integer))
    b_grid = isinstance(b, (int, np.integer))
    if a_grid != b_grid:
        raise DomainError("cannot measure distance between a grid cell and a coordinate")
    if a_grid:
        if grid is None:
            raise DomainError("grid-mode distance needs the owning grid")
        return hex_steps(grid, a, b) * grid.cell_km
    if not (isinstance(a, Coord) and isinstance(b, Coord)):
        raise DomainError(f"unsupported location types {type(a).__name__}, {type(b).__name__}")
    return math.hypot(a.x - b.x, a.y - b.y) * map_width_km


def cell_of(c: Coord, grid: HexGrid) -> int:
    """Cell whose center is nearest to ``c`` (measured in hex space)."""
    return int(cells_of(np.array([[c.x, c.y]]), grid)[0])


def cells_of(points: np.ndarray, grid: HexGrid) -> np.ndarray:
    """Vectorized :func:`cell_of` for an (n, 2) array of unit-square points."""
    pts = np.asarray(points, dtype=float).reshape(-1, 2)
    scale = np.array([grid.width, grid.height])
    d = (pts[:, None, :] - grid.centers[None, :, :]) * scale
    # ties resolve to the lowest cell id (argmin returns the first minimum)
    return np.argmin(np.einsum("ijk,ijk->ij", d, d), axis=1)


def min_center_spacing(grid: HexGrid) -> float:
    """Conservative center spacing in normalized units.

    Adjacent centers are sqrt(3) apart in hex space; the unit square is
    stretched by at most ``max(width, height)`` into hex space.
    """
    if grid.size == 1:
        return math.inf
    return _SQRT3 / max(grid.width, grid.height)
