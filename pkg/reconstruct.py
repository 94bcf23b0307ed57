"""
Recovery of a nonnegative grid vector from noisy pyramid measurements.

select_support walks down the cell tree keeping the w largest children at every
level; l1_fit then solves min_{s >= 0} |y_hat - P s|_1 over a reduced variable class:
one mass per retained finest-level cell plus one aggregate per child that was left out
at some level. Everything below a left-out child has y_hat = 0, so its mass costs the
same wherever it sits inside the subtree and one variable per subtree loses nothing.
The output spreads each subtree aggregate evenly over the subtree's grid points
("spread"), or puts it on the subtree's minimum corner ("anchor").
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import sparse
from scipy.optimize import linprog

import settings
from core_grid import CellId, GridPoint, SparseDist, cell_grid_points, cell_min_point, cells_at, children, parent
from pyramid_transform import PyramidVec, apply_pyramid


class SolverError(RuntimeError):
    pass


@dataclass
class SupportSelection:
    per_level: dict[int, list[CellId]]
    dropped: dict[int, list[CellId]]
    start_level: int
    max_level: int

    @property
    def union(self) -> set[CellId]:
        return {c for cells in self.per_level.values() for c in cells}


@dataclass
class RestrictedMeasurement:
    y_hat: PyramidVec
    support: set[CellId] = field(default_factory=set)


def select_support(y: PyramidVec, w: int, start_level: int | None = None) -> SupportSelection:
    if w < 1:
        raise ValueError(f"Width w must be at least 1, got {w}")
    start = y.start_level if start_level is None else start_level
    if not (0 <= start <= y.max_level):
        raise ValueError(f"Start level {start} outside [0, {y.max_level}]")
    if start < y.start_level:
        raise ValueError(f"Level {start} was not measured (measurements start at {y.start_level})")

    per_level = {start: cells_at(start)}
    dropped: dict[int, list[CellId]] = {start: []}
    for level in range(start + 1, y.max_level + 1):
        candidates = [child for c in per_level[level - 1] for child in children(c)]
        values = y.levels[level]
        ranked = sorted(candidates, key=lambda c: (-values[c.cy, c.cx], c.cy, c.cx))
        keep = min(w, len(ranked))
        per_level[level] = sorted(ranked[:keep], key=lambda c: c.sort_key)
        dropped[level] = sorted(ranked[keep:], key=lambda c: c.sort_key)
    settings.log_debug(
        f"Selected support: {sum(len(v) for v in per_level.values())} cells, "
        f"{sum(len(v) for v in dropped.values())} left-out subtrees"
    )
    return SupportSelection(per_level, dropped, start, y.max_level)


def restrict(y: PyramidVec, sel: SupportSelection) -> RestrictedMeasurement:
    levels = [np.zeros_like(arr) for arr in y.levels]
    for level, cells in sel.per_level.items():
        for c in cells:
            levels[level][c.cy, c.cx] = y.levels[level][c.cy, c.cx]
    measured = [i >= sel.start_level for i in range(len(levels))]
    return RestrictedMeasurement(PyramidVec(levels, sel.start_level, measured), sel.union)


PLACEMENTS = ("spread", "anchor")


def l1_fit(restricted: RestrictedMeasurement, sel: SupportSelection, placement: str = "spread") -> SparseDist:
    if placement not in PLACEMENTS:
        raise ValueError(f"Unknown placement {placement!r}; expected one of {', '.join(PLACEMENTS)}")
    y_hat = restricted.y_hat
    max_level, start = sel.max_level, sel.start_level
    delta = 1 << max_level

    rows: dict[CellId, int] = {}
    for level in range(start, max_level + 1):
        for c in sel.per_level[level]:
            rows[c] = len(rows)

    # (anchor cell, first ancestor that is a measured row, extra penalty per unit mass)
    variables: list[tuple[CellId, CellId, float]] = []
    for c in sel.per_level[max_level]:
        variables.append((c, c, 0.0))
    for level in range(start + 1, max_level + 1):
        tail = sum(2.0 ** -j for j in range(level, max_level + 1))
        for d in sel.dropped[level]:
            variables.append((d, parent(d), tail))

    n_rows, n_vars = len(rows), len(variables)
    if n_vars == 0:
        return SparseDist.zero(delta)

    a_rows, a_cols, a_vals = [], [], []
    for j, (_, first_row, _) in enumerate(variables):
        cell = first_row
        while True:
            a_rows.append(rows[cell])
            a_cols.append(j)
            a_vals.append(2.0 ** -cell.level)
            if cell.level == start:
                break
            cell = parent(cell)
    a = sparse.csr_matrix((a_vals, (a_rows, a_cols)), shape=(n_rows, n_vars))
    y_vec = np.zeros(n_rows)
    for c, r in rows.items():
        y_vec[r] = y_hat.levels[c.level][c.cy, c.cx]

    # Variables [s (n_vars), t (n_rows)]: minimize sum t + penalties . s
    # subject to  A s - t <= y  and  -A s - t <= -y.
    eye = sparse.identity(n_rows, format="csr")
    a_ub = sparse.vstack([sparse.hstack([a, -eye]), sparse.hstack([-a, -eye])], format="csr")
    b_ub = np.concatenate([y_vec, -y_vec])
    penalties = np.array([v[2] for v in variables])
    cost = np.concatenate([penalties, np.ones(n_rows)])
    res = linprog(
        cost,
        A_ub=a_ub,
        b_ub=b_ub,
        bounds=(0, None),
        method="highs",
        options={"maxiter": settings.LP_MAX_ITER},
    )
    if res.status != 0:
        raise SolverError(
            f"l1 fit failed (status {res.status}: {res.message}); "
            f"{n_vars} mass variables, {n_rows} measured cells, iterations {getattr(res, 'nit', '?')}"
        )

    masses = np.clip(res.x[:n_vars], 0.0, None)
    out = _place(variables, masses, delta, placement)
    settings.log_debug(f"l1 fit objective {res.fun:.6g} with {len(out.entries)} nonzero masses")
    return out


def _place(variables, masses, delta: int, placement: str) -> SparseDist:
    if placement == "anchor":
        entries: dict[GridPoint, float] = {}
        for (anchor, _, _), mass in zip(variables, masses):
            if mass <= 1e-15:
                continue
            point = cell_min_point(anchor, delta)
            entries[point] = entries.get(point, 0.0) + float(mass)
        return SparseDist(delta, entries)

    grid = np.zeros((delta, delta))
    for (anchor, _, _), mass in zip(variables, masses):
        if mass <= 1e-15:
            continue
        ix0, ix1, iy0, iy1 = cell_grid_points(anchor, delta)
        grid[iy0:iy1, ix0:ix1] += mass / ((ix1 - ix0) * (iy1 - iy0))
    return SparseDist.from_dense(grid)


def fit_objective(y_hat: PyramidVec, s) -> float:
    """|y_hat - P s|_1 summed over the measured levels."""
    ps = apply_pyramid(s)
    total = 0.0
    for level, (measured, arr) in enumerate(zip(y_hat.measured, y_hat.levels)):
        if measured:
            total += float(np.abs(arr - ps.levels[level]).sum())
    return total


def reconstruct(y: PyramidVec, w: int, start_level: int | None = None, placement: str = "spread") -> SparseDist:
    sel = select_support(y, w, start_level)
    return l1_fit(restrict(y, sel), sel, placement)
