"""
End-to-end private aggregation mechanisms.

aggregate_central is the sparse EMD aggregation: noisy pyramid measurements of the user
sum, reconstruction, normalization. aggregate_dense snaps to a coarse grid sized by
eps * n, projects noisy counts back to the nonnegative cone under the EMD norm and
spreads every coarse cell evenly over the input grid.
baseline_laplace adds Laplace noise to every cell, optionally keeping only the top t%.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

import settings
from core_grid import GridPoint, SparseDist, coarsen, levels_for, spread_dense, sum_dense
from dp_noise import (
    EXPERIMENT_GAMMA,
    THEORY_GAMMA,
    NoiseSchedule,
    RngSeed,
    budget_schedule,
    laplace,
    q_level_for,
)
from emd_oracle import nonnegative_projection
from pyramid_transform import PyramidVec, unscaled_levels
from reconstruct import PLACEMENTS, reconstruct

MODES = ("theory", "experiment")
MASS_TOLERANCE = 1e-9


@dataclass(frozen=True)
class AggregationConfig:
    eps: float
    w: int = 20
    gamma: float | None = None
    mode: str = "experiment"
    seed: int = 0
    noise_free: bool = False
    placement: str = "spread"

    def __post_init__(self):
        if self.eps <= 0:
            raise ValueError(f"Privacy budget eps must be positive, got {self.eps}")
        if self.w < 1:
            raise ValueError(f"Width w must be at least 1, got {self.w}")
        if self.mode not in MODES:
            raise ValueError(f"Mode must be one of {MODES}, got '{self.mode}'")
        if self.gamma is not None and not (0.5 < self.gamma < 1.0):
            raise ValueError(f"Decay rate gamma must lie in (0.5, 1), got {self.gamma}")
        if self.placement not in PLACEMENTS:
            raise ValueError(f"Placement must be one of {PLACEMENTS}, got '{self.placement}'")

    @property
    def resolved_gamma(self) -> float:
        if self.gamma is not None:
            return self.gamma
        return THEORY_GAMMA if self.mode == "theory" else EXPERIMENT_GAMMA

    def start_level(self, max_level: int) -> int:
        if self.mode == "theory":
            return 0
        return min(q_level_for(self.w), max_level)

    def schedule(self, max_level: int) -> NoiseSchedule:
        return budget_schedule(self.eps, max_level, self.w, self.resolved_gamma, self.start_level(max_level))


@dataclass
class AggregateResult:
    a_hat: SparseDist
    s_hat: SparseDist
    y_prime: PyramidVec | None
    schedule: NoiseSchedule | None
    degenerate: bool = False
    epsilon_spent: float = 0.0
    # Grid the dense mechanism measured on; None for the pyramid mechanisms.
    coarse_resolution: int | None = None


def validate_inputs(dists: Sequence[SparseDist]) -> int:
    """Shared resolution of the inputs; rejects empty input and non-unit masses."""
    if not dists:
        raise ValueError("Aggregation needs at least one user distribution")
    resolution = dists[0].resolution
    for i, d in enumerate(dists):
        if d.resolution != resolution:
            raise ValueError(f"User {i} has resolution {d.resolution}, expected {resolution}")
        if not d.is_distribution(MASS_TOLERANCE):
            raise ValueError(f"User {i} has total mass {d.total_mass()}, expected 1")
    return resolution


def uniform(resolution: int) -> SparseDist:
    mass = 1.0 / (resolution * resolution)
    return SparseDist(
        resolution,
        {GridPoint(ix, iy, resolution): mass for iy in range(resolution) for ix in range(resolution)},
    )


def is_degenerate(s_hat: SparseDist) -> bool:
    return s_hat.total_mass() <= 0


def normalize(s_hat: SparseDist, n: int | None = None) -> SparseDist:
    """s_hat / |s_hat|_1; a recovery with no mass logs a warning and becomes uniform."""
    if is_degenerate(s_hat):
        settings.log_warning(
            f"Recovered aggregate has zero mass (n={n}); falling back to the uniform distribution"
        )
        return uniform(s_hat.resolution)
    return s_hat.normalized()


def release_measurements(
    s: np.ndarray, schedule: NoiseSchedule, rng: np.random.Generator, noise_free: bool = False
) -> PyramidVec:
    """y'_i = 2^-i (P_i s + nu_i), nu_i ~ Lap(1/eps_i) per cell, for every measured level."""
    sums = unscaled_levels(s)
    levels = []
    for i, level_sum in enumerate(sums):
        if i < schedule.start_level:
            levels.append(np.zeros_like(level_sum))
            continue
        noisy = level_sum
        if not noise_free:
            noisy = level_sum + laplace(schedule.laplace_scale(i), rng, size=level_sum.shape)
        levels.append(noisy * (2.0 ** -i))
    return PyramidVec(levels, schedule.start_level)


def aggregate_central(
    dists: Sequence[SparseDist],
    cfg: AggregationConfig,
    rng: np.random.Generator | None = None,
    s: np.ndarray | None = None,
) -> AggregateResult:
    resolution = validate_inputs(dists)
    if s is None:
        s = sum_dense(dists, resolution)
    if rng is None:
        rng = RngSeed(cfg.seed).generator()
    max_level = levels_for(resolution)
    schedule = cfg.schedule(max_level)
    y_prime = release_measurements(s, schedule, rng, cfg.noise_free)
    s_hat = reconstruct(y_prime, cfg.w, schedule.start_level, cfg.placement)
    a_hat = normalize(s_hat, len(dists))
    settings.log_debug(
        f"Central aggregation: n={len(dists)} delta={resolution} eps={cfg.eps} w={cfg.w} "
        f"mode={cfg.mode} recovered mass={s_hat.total_mass():.4g}"
    )
    return AggregateResult(a_hat, s_hat, y_prime, schedule, is_degenerate(s_hat), schedule.spent())


def dense_level(eps: float, n: int, max_level: int) -> int:
    """floor(log2 sqrt(eps n)), clamped to [0, max_level]."""
    product = eps * n
    if product < 1:
        return 0
    level = int(math.floor(0.5 * math.log2(product) + 1e-12))
    return max(0, min(level, max_level))


def aggregate_dense(
    dists: Sequence[SparseDist],
    eps: float,
    seed: int = 0,
    rng: np.random.Generator | None = None,
    noise_free: bool = False,
) -> AggregateResult:
    if eps <= 0:
        raise ValueError(f"Privacy budget eps must be positive, got {eps}")
    resolution = validate_inputs(dists)
    level = dense_level(eps, len(dists), levels_for(resolution))
    coarse = 1 << level
    s = sum_dense([coarsen(d, coarse) for d in dists], coarse)
    if rng is None:
        rng = RngSeed(seed).generator()
    noisy = s if noise_free else s + laplace(1.0 / eps, rng, size=s.shape)
    projected, cost = nonnegative_projection(noisy)
    s_hat = SparseDist.from_dense(projected)
    a_hat = normalize(SparseDist.from_dense(spread_dense(projected, resolution)), len(dists))
    settings.log_debug(f"Dense aggregation at delta*={coarse}: projection cost {cost:.4g}")
    return AggregateResult(a_hat, s_hat, None, None, is_degenerate(s_hat), eps, coarse_resolution=coarse)


def baseline_laplace(
    dists: Sequence[SparseDist],
    eps: float,
    threshold_pct: float | None = None,
    seed: int = 0,
    rng: np.random.Generator | None = None,
    s: np.ndarray | None = None,
    noise_free: bool = False,
) -> SparseDist:
    if eps <= 0:
        raise ValueError(f"Privacy budget eps must be positive, got {eps}")
    if threshold_pct is not None and not (0 < threshold_pct <= 100):
        raise ValueError(f"Threshold percentage must lie in (0, 100], got {threshold_pct}")
    resolution = validate_inputs(dists)
    if s is None:
        s = sum_dense(dists, resolution)
    if rng is None:
        rng = RngSeed(seed).generator()
    noisy = s if noise_free else s + laplace(1.0 / eps, rng, size=s.shape)
    noisy = np.clip(noisy, 0.0, None)
    if threshold_pct is not None:
        flat = noisy.ravel()
        keep = int(math.ceil(threshold_pct / 100.0 * flat.size - 1e-9))
        # Stable sort: equal values keep ascending cell order.
        order = np.argsort(-flat, kind="stable")
        trimmed = np.zeros_like(flat)
        trimmed[order[:keep]] = flat[order[:keep]]
        noisy = trimmed.reshape(noisy.shape)
    return normalize(SparseDist.from_dense(noisy), len(dists))


def coreset(
    points: Sequence[GridPoint],
    eps: float,
    w: int = 20,
    seed: int = 0,
    mode: str = "experiment",
    noise_free: bool = False,
) -> SparseDist:
    """Unnormalized recovery s_hat for indicator inputs, usable as a k-median coreset."""
    if not points:
        raise ValueError("Coreset construction needs at least one point")
    resolution = points[0].resolution
    dists = [SparseDist(resolution, {p: 1.0}) for p in points]
    cfg = AggregationConfig(eps=eps, w=w, mode=mode, seed=seed, noise_free=noise_free)
    return aggregate_central(dists, cfg).s_hat
