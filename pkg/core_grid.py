"""
Grid geometry for the unit square [0, 1)^2.

G_delta is the set of points (ix/delta, iy/delta) for a power-of-two resolution
delta = 2^l. Level-i cells are the half-open squares of side 2^-i; level 0 is the whole
square and level l cells coincide with single grid points. Dense arrays over the grid
are always indexed [iy, ix] (rows are y), and per-level cell arrays [cy, cx].
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable, Mapping

import numpy as np


class GridError(ValueError):
    pass


def is_power_of_two(value: int) -> bool:
    return isinstance(value, (int, np.integer)) and value >= 1 and (value & (value - 1)) == 0


def levels_for(delta: int) -> int:
    """Number of refinement levels l with delta = 2^l."""
    if not is_power_of_two(delta):
        raise GridError(f"Resolution must be a power of two, got {delta}")
    return int(delta).bit_length() - 1


def cell_count(level: int) -> int:
    return 4 ** level


@dataclass(frozen=True, order=True)
class GridPoint:
    ix: int
    iy: int
    resolution: int

    def __post_init__(self):
        if not is_power_of_two(self.resolution):
            raise GridError(f"Resolution must be a power of two, got {self.resolution}")
        if not (0 <= self.ix < self.resolution and 0 <= self.iy < self.resolution):
            raise GridError(
                f"Grid point ({self.ix}, {self.iy}) outside [0, {self.resolution - 1}]^2"
            )

    @property
    def x(self) -> float:
        return self.ix / self.resolution

    @property
    def y(self) -> float:
        return self.iy / self.resolution


@dataclass(frozen=True)
class CellId:
    level: int
    cx: int
    cy: int

    def __post_init__(self):
        if self.level < 0:
            raise GridError(f"Cell level must be nonnegative, got {self.level}")
        side = 1 << self.level
        if not (0 <= self.cx < side and 0 <= self.cy < side):
            raise GridError(f"Cell ({self.cx}, {self.cy}) outside level {self.level} range")

    @property
    def sort_key(self) -> tuple[int, int, int]:
        # Ties in top-w selection are broken by this order.
        return (self.level, self.cy, self.cx)

    @property
    def flat_index(self) -> int:
        return self.cy * (1 << self.level) + self.cx

    def __lt__(self, other: "CellId") -> bool:
        return self.sort_key < other.sort_key


ROOT = CellId(0, 0, 0)


def snap(x: float, y: float, delta: int) -> GridPoint:
    if not is_power_of_two(delta):
        raise GridError(f"Resolution must be a power of two, got {delta}")
    if not (0.0 <= x < 1.0 and 0.0 <= y < 1.0):
        raise GridError(f"Coordinate ({x}, {y}) outside [0, 1)^2")
    ix = min(int(math.floor(x * delta)), delta - 1)
    iy = min(int(math.floor(y * delta)), delta - 1)
    return GridPoint(ix, iy, delta)


def containing_cell(p: GridPoint, level: int) -> CellId:
    max_level = levels_for(p.resolution)
    if not (0 <= level <= max_level):
        raise GridError(f"Level {level} outside [0, {max_level}]")
    shift = max_level - level
    return CellId(level, p.ix >> shift, p.iy >> shift)


def children(c: CellId, max_level: int | None = None) -> tuple[CellId, CellId, CellId, CellId]:
    if max_level is not None and c.level >= max_level:
        raise GridError(f"Cell at level {c.level} has no children below level {max_level}")
    lvl = c.level + 1
    x0, y0 = 2 * c.cx, 2 * c.cy
    return (
        CellId(lvl, x0, y0),
        CellId(lvl, x0 + 1, y0),
        CellId(lvl, x0, y0 + 1),
        CellId(lvl, x0 + 1, y0 + 1),
    )


def parent(c: CellId) -> CellId:
    if c.level <= 0:
        raise GridError("The root cell has no parent")
    return CellId(c.level - 1, c.cx >> 1, c.cy >> 1)


def cells_at(level: int) -> list[CellId]:
    side = 1 << level
    return [CellId(level, cx, cy) for cy in range(side) for cx in range(side)]


def cell_bounds(c: CellId) -> tuple[float, float, float]:
    side = 2.0 ** -c.level
    return c.cx * side, c.cy * side, side


def cell_grid_points(c: CellId, delta: int) -> tuple[int, int, int, int]:
    """Half-open index ranges (ix0, ix1, iy0, iy1) of the grid points inside c."""
    max_level = levels_for(delta)
    if c.level > max_level:
        raise GridError(f"Cell level {c.level} finer than resolution {delta}")
    span = delta >> c.level
    return c.cx * span, (c.cx + 1) * span, c.cy * span, (c.cy + 1) * span


def cell_min_point(c: CellId, delta: int) -> GridPoint:
    ix0, _, iy0, _ = cell_grid_points(c, delta)
    return GridPoint(ix0, iy0, delta)


def l1_distance(p: GridPoint, q: GridPoint) -> float:
    if p.resolution != q.resolution:
        raise GridError("Grid points carry different resolutions")
    return (abs(p.ix - q.ix) + abs(p.iy - q.iy)) / p.resolution


def embed_rectangle(width: int, height: int) -> tuple[int, np.ndarray]:
    """
    Smallest power-of-two square holding a width x height grid, plus the mask of
    cells that belong to the rectangle (rows are y).
    """
    if width < 1 or height < 1:
        raise GridError(f"Rectangle must be at least 1x1, got {width}x{height}")
    delta = 1
    while delta < max(width, height):
        delta *= 2
    mask = np.zeros((delta, delta), dtype=bool)
    mask[:height, :width] = True
    return delta, mask


@dataclass(frozen=True)
class SparseDist:
    resolution: int
    entries: Mapping[GridPoint, float]

    def __post_init__(self):
        if not is_power_of_two(self.resolution):
            raise GridError(f"Resolution must be a power of two, got {self.resolution}")

    @classmethod
    def from_mapping(cls, resolution: int, mapping: Mapping) -> "SparseDist":
        """
        Build from {GridPoint or (ix, iy): mass}. Zero masses are dropped and
        repeated keys accumulate.
        """
        entries: dict[GridPoint, float] = {}
        for key, mass in mapping.items():
            point = key if isinstance(key, GridPoint) else GridPoint(int(key[0]), int(key[1]), resolution)
            if point.resolution != resolution:
                raise GridError("Entry resolution differs from the distribution resolution")
            mass = float(mass)
            if not math.isfinite(mass) or mass < 0:
                raise ValueError(f"Mass at {point} must be finite and nonnegative, got {mass}")
            if mass > 0:
                entries[point] = entries.get(point, 0.0) + mass
        return cls(resolution, entries)

    @classmethod
    def zero(cls, resolution: int) -> "SparseDist":
        return cls(resolution, {})

    @classmethod
    def from_dense(cls, array: np.ndarray, tol: float = 0.0) -> "SparseDist":
        array = np.asarray(array, dtype=float)
        if array.ndim != 2 or array.shape[0] != array.shape[1]:
            raise GridError(f"Dense grid must be square, got shape {array.shape}")
        delta = array.shape[0]
        if np.any(array < -tol):
            raise ValueError("Dense grid has negative entries")
        iys, ixs = np.nonzero(array > tol)
        entries = {
            GridPoint(int(ix), int(iy), delta): float(array[iy, ix]) for iy, ix in zip(iys, ixs)
        }
        return cls(delta, entries)

    @classmethod
    def from_points(cls, points: Iterable[GridPoint], resolution: int, normalize: bool = True) -> "SparseDist":
        counts: dict[GridPoint, float] = {}
        for p in points:
            if p.resolution != resolution:
                raise GridError("Point resolution differs from the requested resolution")
            counts[p] = counts.get(p, 0.0) + 1.0
        dist = cls(resolution, counts)
        return dist.normalized() if normalize and counts else dist

    def total_mass(self) -> float:
        return float(math.fsum(self.entries.values()))

    def support(self) -> list[GridPoint]:
        return sorted(self.entries, key=lambda p: (p.iy, p.ix))

    def as_arrays(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        pts = self.support()
        ix = np.fromiter((p.ix for p in pts), dtype=np.int64, count=len(pts))
        iy = np.fromiter((p.iy for p in pts), dtype=np.int64, count=len(pts))
        mass = np.fromiter((self.entries[p] for p in pts), dtype=float, count=len(pts))
        return ix, iy, mass

    def to_dense(self) -> np.ndarray:
        out = np.zeros((self.resolution, self.resolution))
        ix, iy, mass = self.as_arrays()
        np.add.at(out, (iy, ix), mass)
        return out

    def scale(self, alpha: float) -> "SparseDist":
        if alpha < 0:
            raise ValueError("Scaling factor must be nonnegative")
        return SparseDist.from_mapping(self.resolution, {p: m * alpha for p, m in self.entries.items()})

    def add(self, other: "SparseDist") -> "SparseDist":
        if other.resolution != self.resolution:
            raise GridError("Cannot add distributions of different resolutions")
        merged = dict(self.entries)
        for p, m in other.entries.items():
            merged[p] = merged.get(p, 0.0) + m
        return SparseDist(self.resolution, merged)

    def normalized(self) -> "SparseDist":
        total = self.total_mass()
        if total <= 0:
            raise ValueError("Cannot normalize a distribution with zero mass")
        return SparseDist(self.resolution, {p: m / total for p, m in self.entries.items()})

    def is_distribution(self, tol: float = 1e-9) -> bool:
        return abs(self.total_mass() - 1.0) <= tol


def sum_dense(dists: Iterable[SparseDist], resolution: int) -> np.ndarray:
    """Dense sum s = sum_i p_i of distributions sharing a resolution."""
    out = np.zeros((resolution, resolution))
    for d in dists:
        if d.resolution != resolution:
            raise GridError("All inputs must share one resolution")
        ix, iy, mass = d.as_arrays()
        np.add.at(out, (iy, ix), mass)
    return out


def coarsen(dist: SparseDist, resolution: int) -> SparseDist:
    """Snap every point of dist to the coarser grid G_resolution (floor of coordinates)."""
    shift = levels_for(dist.resolution) - levels_for(resolution)
    if shift < 0:
        raise GridError(f"Cannot coarsen resolution {dist.resolution} to finer {resolution}")
    merged: dict[GridPoint, float] = {}
    for p, m in dist.entries.items():
        q = GridPoint(p.ix >> shift, p.iy >> shift, resolution)
        merged[q] = merged.get(q, 0.0) + m
    return SparseDist(resolution, merged)


def spread_dense(array: np.ndarray, resolution: int) -> np.ndarray:
    """Spread each coarse cell's mass evenly over the finer grid points it covers."""
    array = np.asarray(array, dtype=float)
    span = resolution // array.shape[0]
    if span < 1 or span * array.shape[0] != resolution:
        raise GridError(f"Cannot spread a {array.shape[0]}-grid onto resolution {resolution}")
    return np.kron(array, np.ones((span, span))) / (span * span)
