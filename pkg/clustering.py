"""
Planar k-median costs under l1, brute-force small-instance solvers and the empirical
coreset check for recovered aggregates.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

import settings
from core_grid import GridPoint, SparseDist, is_power_of_two

ENUMERATION_BUDGET = 1_000_000


class EnumerationBudgetError(Exception):
    pass


@dataclass(frozen=True)
class CenterSet:
    centers: tuple[GridPoint, ...]
    k: int | None = None

    def __post_init__(self):
        if not self.centers:
            raise ValueError("A center set needs at least one center")
        if self.k is not None and len(self.centers) > self.k:
            raise ValueError(f"{len(self.centers)} centers exceed k={self.k}")

    def coords(self) -> np.ndarray:
        return np.array([(c.x, c.y) for c in self.centers])


def _coords(points: Sequence[GridPoint]) -> np.ndarray:
    return np.array([(p.x, p.y) for p in points], dtype=float).reshape(-1, 2)


def _l1_matrix(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    return np.abs(a[:, None, 0] - b[None, :, 0]) + np.abs(a[:, None, 1] - b[None, :, 1])


def _centers(C) -> CenterSet:
    if isinstance(C, CenterSet):
        return C
    return CenterSet(tuple(C))


def cost_points(X: Sequence[GridPoint], C) -> float:
    """sum over x in X of min over c in C of |c - x|_1."""
    C = _centers(C)
    if not X:
        return 0.0
    return float(_l1_matrix(_coords(X), C.coords()).min(axis=1).sum())


def cost_vec(x: SparseDist, C) -> float:
    C = _centers(C)
    pts = x.support()
    if not pts:
        return 0.0
    mass = np.array([x.entries[p] for p in pts])
    return float(mass @ _l1_matrix(_coords(pts), C.coords()).min(axis=1))


def candidate_grid(candidate_delta: int) -> list[GridPoint]:
    """All points of G_candidate_delta, row by row."""
    if not is_power_of_two(candidate_delta):
        raise ValueError(f"Candidate grid size must be a power of two, got {candidate_delta}")
    return [GridPoint(ix, iy, candidate_delta) for iy in range(candidate_delta) for ix in range(candidate_delta)]


def _check_budget(n_candidates: int, k: int) -> int:
    if k < 1:
        raise ValueError(f"k must be at least 1, got {k}")
    total = math.comb(n_candidates, k)
    if total > ENUMERATION_BUDGET:
        raise EnumerationBudgetError(
            f"C({n_candidates}, {k}) = {total} center sets exceed the enumeration budget "
            f"{ENUMERATION_BUDGET}; use a coarser candidate grid"
        )
    return total


def brute_kmedian(
    x: SparseDist, k: int, candidates: Sequence[GridPoint] | None = None
) -> tuple[CenterSet, float]:
    """Exhaustive optimum over k-subsets of the candidates (default: every grid point of x)."""
    if candidates is None:
        candidates = candidate_grid(x.resolution)
    candidates = list(candidates)
    support = x.support()
    if not support:
        raise ValueError("k-median needs a nonempty input")
    if k >= len(support) and set(support) <= set(candidates):
        return CenterSet(tuple(support), k), 0.0
    k = min(k, len(candidates))
    _check_budget(len(candidates), k)

    mass = np.array([x.entries[p] for p in support])
    dist = _l1_matrix(_coords(support), _coords(candidates))
    best_cost, best_combo = math.inf, None
    for combo in itertools.combinations(range(len(candidates)), k):
        cost = float(mass @ dist[:, combo].min(axis=1))
        if cost < best_cost:
            best_cost, best_combo = cost, combo
    return CenterSet(tuple(candidates[i] for i in best_combo), k), best_cost


@dataclass
class CoresetReport:
    k: int
    lam: float
    eps: float
    n: int
    center_sets: int
    max_deviation: float
    empirical_kappa: float
    fitted_C: float

    def as_row(self) -> dict:
        return {
            "k": self.k,
            "lambda": self.lam,
            "eps": self.eps,
            "empirical_kappa": self.empirical_kappa,
            "fitted_C": self.fitted_C,
        }


def coreset_check(
    X: Sequence[GridPoint],
    s_hat: SparseDist,
    k: int,
    lam: float,
    eps: float,
    candidate_delta: int = 4,
) -> CoresetReport:
    """
    Worst additive error of s_hat as a (lam, kappa)-coreset for X over every k-subset
    of the candidate grid: kappa = max_C |cost_C(s_hat) - cost_C(X)| - lam cost_C(X).
    """
    if not X:
        raise ValueError("Coreset check needs at least one point")
    if lam < 0 or eps <= 0:
        raise ValueError(f"Need lam >= 0 and eps > 0, got lam={lam}, eps={eps}")
    candidates = candidate_grid(candidate_delta)
    total = _check_budget(len(candidates), k)

    x_pts = _coords(X)
    s_pts = s_hat.support()
    s_mass = np.array([s_hat.entries[p] for p in s_pts])
    dist_x = _l1_matrix(x_pts, _coords(candidates))
    dist_s = _l1_matrix(_coords(s_pts), _coords(candidates)) if s_pts else np.zeros((0, len(candidates)))

    raw, kappa = 0.0, -math.inf
    for combo in itertools.combinations(range(len(candidates)), k):
        cost_x = float(dist_x[:, combo].min(axis=1).sum())
        cost_s = float(s_mass @ dist_s[:, combo].min(axis=1)) if s_pts else 0.0
        deviation = abs(cost_s - cost_x)
        raw = max(raw, deviation)
        kappa = max(kappa, deviation - lam * cost_x)
    kappa = max(kappa, 0.0)
    fitted = kappa * eps / math.sqrt(k)
    settings.log_debug(f"Coreset check k={k}: {total} center sets, kappa={kappa:.4g}")
    return CoresetReport(k, lam, eps, len(X), total, raw, kappa, fitted)
