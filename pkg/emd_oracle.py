"""
Exact Earth Mover's Distance under the l1 ground metric.

All solvers run or-tools' SimpleMinCostFlow on integer data: masses are rescaled to
multiples of settings.FLOW_QUANTUM and distances are counted in grid steps, so the
optimum is exact up to the quantum.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from typing import Mapping

import numpy as np
from ortools.graph.python import min_cost_flow

import settings
from core_grid import GridPoint, SparseDist, levels_for

# EMD-norm slack penalty per unit of unmatched mass: the l1 diameter of [0, 1)^2.
SLACK_PENALTY = 2.0
BRUTE_FORCE_MAX_DELTA = 8
BRUTE_FORCE_MAX_K = 2


class CapacityError(Exception):
    pass


class MassMismatchError(ValueError):
    pass


@dataclass
class TransportPlan:
    flows: dict[tuple[GridPoint, GridPoint], float] = field(default_factory=dict)
    cost: float = 0.0


def _quantize(masses: np.ndarray) -> np.ndarray:
    return np.rint(np.asarray(masses, dtype=float) / settings.FLOW_QUANTUM).astype(np.int64)


def _solve(smcf: min_cost_flow.SimpleMinCostFlow, what: str):
    status = smcf.solve()
    if status != smcf.OPTIMAL:
        raise RuntimeError(f"Min-cost flow for {what} ended with status {status}")


def _grid_steps(ax: np.ndarray, ay: np.ndarray, bx: np.ndarray, by: np.ndarray) -> np.ndarray:
    return np.abs(ax[:, None] - bx[None, :]) + np.abs(ay[:, None] - by[None, :])


def _transport(ax, ay, am, bx, by, bm, what: str) -> tuple[float, list[tuple[int, int, float]]]:
    """Optimal transport between two weighted point sets; cost in grid steps."""
    supply, demand = _quantize(am), _quantize(bm)
    # Rounding may unbalance the two sides by a few quanta; the largest demand absorbs it.
    imbalance = int(supply.sum() - demand.sum())
    demand[int(np.argmax(demand))] += imbalance

    n_src, n_dst = supply.size, demand.size
    steps = _grid_steps(ax, ay, bx, by)
    tails = np.repeat(np.arange(n_src), n_dst)
    heads = n_src + np.tile(np.arange(n_dst), n_src)
    caps = np.full(tails.shape, int(max(supply.sum(), demand.sum())), dtype=np.int64)

    smcf = min_cost_flow.SimpleMinCostFlow()
    arcs = smcf.add_arcs_with_capacity_and_unit_cost(tails, heads, caps, steps.ravel().astype(np.int64))
    smcf.set_nodes_supplies(np.arange(n_src + n_dst), np.concatenate([supply, -demand]))
    _solve(smcf, what)

    flows = smcf.flows(arcs)
    moved = [
        (int(tails[a]), int(heads[a]) - n_src, float(flows[a]) * settings.FLOW_QUANTUM)
        for a in np.nonzero(flows)[0]
    ]
    return float(smcf.optimal_cost()) * settings.FLOW_QUANTUM, moved


def _check_masses(mp: float, mq: float):
    if abs(mp - mq) > 1e-9 * max(1.0, mp, mq):
        raise MassMismatchError(f"EMD requires equal masses, got {mp} and {mq}")


def _check_capacity(size: int):
    if size > settings.ORACLE_MAX_SUPPORT:
        raise CapacityError(
            f"Combined support {size} exceeds the exact EMD capacity "
            f"{settings.ORACLE_MAX_SUPPORT}; use pyramid_l1 as an upper bound instead"
        )


def emd(p: SparseDist, q: SparseDist) -> tuple[float, TransportPlan]:
    if p.resolution != q.resolution:
        raise ValueError("EMD inputs must share one resolution")
    _check_masses(p.total_mass(), q.total_mass())
    if not p.entries or not q.entries:
        return 0.0, TransportPlan()
    _check_capacity(len(p.entries) + len(q.entries))

    src_pts, dst_pts = p.support(), q.support()
    px, py, pm = p.as_arrays()
    qx, qy, qm = q.as_arrays()
    steps_cost, moved = _transport(px, py, pm, qx, qy, qm, "EMD")
    plan = TransportPlan(
        flows={(src_pts[i], dst_pts[j]): m for i, j, m in moved},
        cost=steps_cost / p.resolution,
    )
    return plan.cost, plan


def emd_dense(a: np.ndarray, b: np.ndarray, unit: float | None = None) -> float:
    """
    EMD between two equal-mass nonnegative arrays of any rectangular shape (such as
    padded heatmaps). One grid step has length 1/unit; unit defaults to the larger side.
    """
    a, b = np.asarray(a, dtype=float), np.asarray(b, dtype=float)
    if a.shape != b.shape or a.ndim != 2:
        raise ValueError(f"EMD inputs must be 2-D arrays of one shape, got {a.shape} and {b.shape}")
    if np.any(a < 0) or np.any(b < 0):
        raise ValueError("EMD inputs must be nonnegative")
    _check_masses(float(a.sum()), float(b.sum()))
    unit = float(max(a.shape)) if unit is None else float(unit)
    ay, ax = np.nonzero(a)
    by, bx = np.nonzero(b)
    if ax.size == 0 or bx.size == 0:
        return 0.0
    _check_capacity(ax.size + bx.size)
    steps_cost, _ = _transport(ax, ay, a[ay, ax], bx, by, b[by, bx], "dense EMD")
    return steps_cost / unit


def emd_grid(a: np.ndarray, b: np.ndarray, unit: float | None = None) -> float:
    """
    emd_dense on a 4-neighbour grid graph instead of a complete bipartite one.

    Unit-cost steps between neighbours add up to the l1 distance, so the optimum is
    the same while the arc count stays linear in the number of cells.
    """
    a, b = np.asarray(a, dtype=float), np.asarray(b, dtype=float)
    if a.shape != b.shape or a.ndim != 2:
        raise ValueError(f"EMD inputs must be 2-D arrays of one shape, got {a.shape} and {b.shape}")
    if np.any(a < 0) or np.any(b < 0):
        raise ValueError("EMD inputs must be nonnegative")
    _check_masses(float(a.sum()), float(b.sum()))
    if a.size > settings.GRID_FLOW_MAX_CELLS:
        raise CapacityError(
            f"Grid of {a.size} cells exceeds the grid-flow capacity {settings.GRID_FLOW_MAX_CELLS}"
        )
    unit = float(max(a.shape)) if unit is None else float(unit)
    net = _quantize(a.ravel()) - _quantize(b.ravel())
    if not net.any():
        return 0.0
    net[int(np.argmin(net))] -= int(net.sum())

    rows, cols = a.shape
    idx = np.arange(a.size).reshape(rows, cols)
    right = (idx[:, :-1].ravel(), idx[:, 1:].ravel())
    down = (idx[:-1, :].ravel(), idx[1:, :].ravel())
    tails = np.concatenate([right[0], right[1], down[0], down[1]])
    heads = np.concatenate([right[1], right[0], down[1], down[0]])
    big = int(np.abs(net).sum()) + 1

    smcf = min_cost_flow.SimpleMinCostFlow()
    smcf.add_arcs_with_capacity_and_unit_cost(
        tails, heads, np.full(tails.shape, big, dtype=np.int64), np.ones(tails.shape, dtype=np.int64)
    )
    smcf.set_nodes_supplies(np.arange(a.size), net)
    _solve(smcf, "grid EMD")
    return float(smcf.optimal_cost()) * settings.FLOW_QUANTUM / unit


def _signed_entries(w) -> tuple[int, np.ndarray, np.ndarray, np.ndarray]:
    if isinstance(w, Mapping):
        if not w:
            return 1, np.zeros(0, np.int64), np.zeros(0, np.int64), np.zeros(0)
        pts = [p for p, v in w.items() if v != 0]
        delta = next(iter(w)).resolution
        ix = np.array([p.ix for p in pts], dtype=np.int64)
        iy = np.array([p.iy for p in pts], dtype=np.int64)
        vals = np.array([float(w[p]) for p in pts])
        return delta, ix, iy, vals
    arr = np.asarray(w, dtype=float)
    if arr.ndim != 2 or arr.shape[0] != arr.shape[1]:
        raise ValueError(f"Signed grid vector must be square, got shape {arr.shape}")
    delta = arr.shape[0]
    levels_for(delta)
    iy, ix = np.nonzero(arr)
    return delta, ix.astype(np.int64), iy.astype(np.int64), arr[iy, ix]


def emd_norm(w) -> float:
    """
    min over p, q >= 0 with p - q + r = w and |p| = |q| of EMD(p, q) + 2 |r|_1.

    Solved as a flow from the positive to the negative part of w with a slack node
    that absorbs or emits unmatched mass at the penalty rate.
    """
    delta, ix, iy, vals = _signed_entries(w)
    if vals.size == 0:
        return 0.0
    if vals.size > settings.NORM_MAX_SUPPORT:
        raise CapacityError(
            f"Support {vals.size} exceeds the EMD-norm capacity {settings.NORM_MAX_SUPPORT}"
        )
    pos, neg = vals > 0, vals < 0
    supply, demand = _quantize(vals[pos]), _quantize(-vals[neg])
    n_pos, n_neg = int(pos.sum()), int(neg.sum())
    slack = n_pos + n_neg
    penalty = int(round(SLACK_PENALTY * delta))
    big = int(supply.sum() + demand.sum()) + 1

    steps = _grid_steps(ix[pos], iy[pos], ix[neg], iy[neg])
    tails = [np.repeat(np.arange(n_pos), n_neg), np.arange(n_pos), np.full(n_neg, slack)]
    heads = [n_pos + np.tile(np.arange(n_neg), n_pos), np.full(n_pos, slack), n_pos + np.arange(n_neg)]
    costs = [steps.ravel(), np.full(n_pos, penalty), np.full(n_neg, penalty)]
    tails, heads = np.concatenate(tails), np.concatenate(heads)
    costs = np.concatenate(costs).astype(np.int64)

    smcf = min_cost_flow.SimpleMinCostFlow()
    smcf.add_arcs_with_capacity_and_unit_cost(tails, heads, np.full(tails.shape, big, dtype=np.int64), costs)
    supplies = np.concatenate([supply, -demand, [int(demand.sum() - supply.sum())]])
    smcf.set_nodes_supplies(np.arange(slack + 1), supplies)
    _solve(smcf, "EMD norm")
    return float(smcf.optimal_cost()) * settings.FLOW_QUANTUM / delta


def nonnegative_projection(noisy: np.ndarray) -> tuple[np.ndarray, float]:
    """
    argmin over v >= 0 of emd_norm(v - noisy), with its cost.

    Deficits at negative cells are filled either by moving positive mass along the
    grid (one unit cost per step between 4-neighbours, which is exactly the l1
    distance) or by creating mass at the slack penalty. Positive mass that is not
    moved stays in place for free.
    """
    noisy = np.asarray(noisy, dtype=float)
    delta = noisy.shape[0]
    levels_for(delta)
    n_cells = delta * delta
    flat = noisy.ravel()
    supply = np.where(flat > 0, _quantize(np.clip(flat, 0, None)), 0)
    demand = np.where(flat < 0, _quantize(np.clip(-flat, 0, None)), 0)
    if demand.sum() == 0:
        return np.clip(noisy, 0, None), 0.0
    slack = n_cells
    big = int(supply.sum() + demand.sum()) + 1
    penalty = int(round(SLACK_PENALTY * delta))

    idx = np.arange(n_cells).reshape(delta, delta)
    right = (idx[:, :-1].ravel(), idx[:, 1:].ravel())
    down = (idx[:-1, :].ravel(), idx[1:, :].ravel())
    tails = np.concatenate([right[0], right[1], down[0], down[1], np.arange(n_cells), np.full(n_cells, slack)])
    heads = np.concatenate([right[1], right[0], down[1], down[0], np.full(n_cells, slack), np.arange(n_cells)])
    n_grid_arcs = 2 * (right[0].size + down[0].size)
    costs = np.concatenate([
        np.ones(n_grid_arcs, dtype=np.int64),
        np.zeros(n_cells, dtype=np.int64),
        np.full(n_cells, penalty, dtype=np.int64),
    ])

    smcf = min_cost_flow.SimpleMinCostFlow()
    arcs = smcf.add_arcs_with_capacity_and_unit_cost(tails, heads, np.full(tails.shape, big, dtype=np.int64), costs)
    supplies = np.concatenate([supply - demand, [int(demand.sum() - supply.sum())]])
    smcf.set_nodes_supplies(np.arange(n_cells + 1), supplies)
    _solve(smcf, "nonnegative projection")

    flows = smcf.flows(arcs)
    kept = flows[n_grid_arcs:n_grid_arcs + n_cells].astype(float) * settings.FLOW_QUANTUM
    cost = float(smcf.optimal_cost()) * settings.FLOW_QUANTUM / delta
    return kept.reshape(delta, delta), cost


def best_k_sparse_error(x: SparseDist, k: int) -> float:
    """Optimal k-sparse EMD approximation error of x by exhaustive site enumeration."""
    if k < 1:
        raise ValueError("k must be at least 1")
    if len(x.entries) <= k:
        return 0.0
    delta = x.resolution
    if delta > BRUTE_FORCE_MAX_DELTA or k > BRUTE_FORCE_MAX_K:
        raise CapacityError(
            f"Brute-force k-sparse error supports delta <= {BRUTE_FORCE_MAX_DELTA} and "
            f"k <= {BRUTE_FORCE_MAX_K}; use clustering.brute_kmedian on a coarser candidate grid"
        )
    ix, iy, mass = x.as_arrays()
    cand = np.arange(delta * delta)
    dist = _grid_steps(ix, iy, cand % delta, cand // delta) / delta
    best = np.inf
    for combo in itertools.combinations(range(cand.size), k):
        cost = float(mass @ dist[:, list(combo)].min(axis=1))
        best = min(best, cost)
    return best
