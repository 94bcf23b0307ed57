"""
Noise sources and the per-level privacy budget schedule.

Every sampler takes an explicit numpy Generator; RngSeed derives independent,
reproducible streams from (seed, stream id).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

THEORY_GAMMA = 0.8
EXPERIMENT_GAMMA = 1.0 / math.sqrt(2.0)


@dataclass(frozen=True)
class RngSeed:
    seed: int
    stream: int = 0

    def generator(self) -> np.random.Generator:
        return np.random.default_rng(np.random.SeedSequence(entropy=int(self.seed), spawn_key=(int(self.stream),)))

    def child(self, stream: int) -> "RngSeed":
        return RngSeed(self.seed, self.stream * 1_000_003 + int(stream) + 1)


@dataclass(frozen=True)
class NoiseSchedule:
    epsilons: tuple[float, ...]
    gamma: float
    q_level: int
    total: float
    start_level: int = 0

    @property
    def max_level(self) -> int:
        return self.start_level + len(self.epsilons) - 1

    def epsilon(self, level: int) -> float:
        if not (self.start_level <= level <= self.max_level):
            raise ValueError(f"Level {level} is not measured by this schedule")
        return self.epsilons[level - self.start_level]

    def laplace_scale(self, level: int) -> float:
        return 1.0 / self.epsilon(level)

    def spent(self) -> float:
        return math.fsum(self.epsilons)


def q_level_for(w: int) -> int:
    """floor(log2 sqrt(w)), i.e. the largest q with 4^q <= w."""
    if w < 1:
        raise ValueError(f"Width w must be at least 1, got {w}")
    q = 0
    while 4 ** (q + 1) <= w:
        q += 1
    return q


def budget_schedule(eps: float, max_level: int, w: int, gamma: float, start_level: int = 0) -> NoiseSchedule:
    """
    eps_i = gamma^|i - q| * eps / Z over the measured levels, Z normalizing the sum to eps.
    """
    if eps <= 0:
        raise ValueError(f"Privacy budget must be positive, got {eps}")
    if not (0.5 < gamma < 1.0):
        raise ValueError(f"Decay rate gamma must lie in (0.5, 1), got {gamma}")
    if max_level < 0 or not (0 <= start_level <= max_level):
        raise ValueError(f"Invalid level range [{start_level}, {max_level}]")
    q = min(q_level_for(w), max_level)
    weights = [gamma ** abs(i - q) for i in range(start_level, max_level + 1)]
    z = math.fsum(weights)
    epsilons = tuple(wt * eps / z for wt in weights)
    return NoiseSchedule(epsilons, gamma, q, eps, start_level)


def laplace(b: float, rng: np.random.Generator, size=None):
    if b <= 0:
        raise ValueError(f"Laplace scale must be positive, got {b}")
    return rng.laplace(0.0, b, size=size)


def polya(r: float, p: float, rng: np.random.Generator, size=None):
    """Polya(r, p) via its Gamma-Poisson mixture; mean r p / (1 - p)."""
    if r <= 0:
        raise ValueError(f"Polya shape must be positive, got {r}")
    if not (0.0 < p < 1.0):
        raise ValueError(f"Polya parameter must lie in (0, 1), got {p}")
    rate = rng.gamma(shape=r, scale=p / (1.0 - p), size=size)
    return rng.poisson(rate)


def discrete_laplace_share(n: int, eps_i: float, rng: np.random.Generator, size=None):
    """
    One user's share X+ - X- with X+, X- i.i.d. Polya(1/n, e^-eps_i); the n shares sum
    to a discrete Laplace variable with parameter e^-eps_i.
    """
    if n < 1:
        raise ValueError(f"User count must be at least 1, got {n}")
    if eps_i <= 0:
        raise ValueError(f"Level budget must be positive, got {eps_i}")
    alpha = math.exp(-eps_i)
    return polya(1.0 / n, alpha, rng, size) - polya(1.0 / n, alpha, rng, size)


def discrete_laplace_pmf(k, eps_i: float):
    alpha = math.exp(-eps_i)
    return (1.0 - alpha) / (1.0 + alpha) * np.power(alpha, np.abs(k))
