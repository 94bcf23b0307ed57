"""
The scaled pyramidal transform.

P stacks the level partition maps P_0 .. P_l, level i scaled by 2^-i. The matrix is
never built; every use goes through the per-level block sums below.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from core_grid import CellId, GridError, SparseDist, levels_for


@dataclass
class PyramidVec:
    levels: list[np.ndarray]
    start_level: int = 0
    # Flags levels that carry a released measurement; levels below start_level are
    # held as zeros and excluded from every fit.
    measured: list[bool] = field(default_factory=list)

    def __post_init__(self):
        for i, arr in enumerate(self.levels):
            side = 1 << i
            if arr.shape != (side, side):
                raise GridError(f"Level {i} must have shape {(side, side)}, got {arr.shape}")
        if not self.measured:
            self.measured = [i >= self.start_level for i in range(len(self.levels))]

    @property
    def max_level(self) -> int:
        return len(self.levels) - 1

    @property
    def resolution(self) -> int:
        return 1 << self.max_level

    def value(self, cell: CellId) -> float:
        return float(self.levels[cell.level][cell.cy, cell.cx])

    def flatten(self) -> np.ndarray:
        return np.concatenate([arr.ravel() for arr in self.levels])

    def copy(self) -> "PyramidVec":
        return PyramidVec([arr.copy() for arr in self.levels], self.start_level, list(self.measured))

    @classmethod
    def from_flat(cls, flat: np.ndarray, max_level: int, start_level: int = 0) -> "PyramidVec":
        flat = np.asarray(flat, dtype=float)
        expected = sum(4 ** i for i in range(max_level + 1))
        if flat.shape != (expected,):
            raise GridError(f"Flat pyramid must have {expected} entries, got {flat.shape}")
        levels, offset = [], 0
        for i in range(max_level + 1):
            side = 1 << i
            levels.append(flat[offset:offset + side * side].reshape(side, side).copy())
            offset += side * side
        return cls(levels, start_level)


def level_offsets(max_level: int) -> list[int]:
    offsets, total = [], 0
    for i in range(max_level + 1):
        offsets.append(total)
        total += 4 ** i
    return offsets


def measurement_levels(max_level: int, start_level: int = 0) -> range:
    if not (0 <= start_level <= max_level):
        raise GridError(f"Start level {start_level} outside [0, {max_level}]")
    return range(start_level, max_level + 1)


def _as_dense(v) -> np.ndarray:
    if isinstance(v, SparseDist):
        return v.to_dense()
    arr = np.asarray(v, dtype=float)
    if arr.ndim != 2 or arr.shape[0] != arr.shape[1]:
        raise GridError(f"Grid vector must be a square array, got shape {arr.shape}")
    levels_for(arr.shape[0])
    return arr


def unscaled_levels(v) -> list[np.ndarray]:
    """[P_0 v, ..., P_l v], computed by repeated 2x2 block sums from the finest level."""
    arr = _as_dense(v)
    max_level = levels_for(arr.shape[0])
    sums = [arr]
    for _ in range(max_level):
        fine = sums[-1]
        side = fine.shape[0] // 2
        sums.append(fine.reshape(side, 2, side, 2).sum(axis=(1, 3)))
    sums.reverse()
    return sums


def partition_sums(v, level: int) -> np.ndarray:
    arr = _as_dense(v)
    max_level = levels_for(arr.shape[0])
    if not (0 <= level <= max_level):
        raise GridError(f"Level {level} outside [0, {max_level}]")
    side = 1 << level
    span = arr.shape[0] // side
    return arr.reshape(side, span, side, span).sum(axis=(1, 3))


def apply_pyramid(v, start_level: int = 0) -> PyramidVec:
    sums = unscaled_levels(v)
    measurement_levels(len(sums) - 1, start_level)
    levels = [s * (2.0 ** -i) for i, s in enumerate(sums)]
    return PyramidVec(levels, start_level)


def pyramid_of_dense(array: np.ndarray, start_level: int = 0) -> PyramidVec:
    return apply_pyramid(np.asarray(array, dtype=float), start_level)


def pyramid_l1(z) -> float:
    """sum_i 2^-i sum_c |sum_{p in c} z(p)|; an upper bound on the EMD norm of z."""
    total = 0.0
    for i, s in enumerate(unscaled_levels(z)):
        total += (2.0 ** -i) * float(np.abs(s).sum())
    return total
