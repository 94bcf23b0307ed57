"""
Shuffle-model release of the pyramid measurements.

Each client scales and floors its unscaled level sums, adds its share of two-sided
Polya noise (the n shares of one coordinate add up to a discrete Laplace variable),
and splits every coordinate into r additive shares over Z_q. The shuffler is a seeded
permutation; the analyzer only sums shares per coordinate.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable, NamedTuple, Sequence

import numpy as np

import settings
from aggregator import AggregateResult, AggregationConfig, is_degenerate, normalize, validate_inputs
from core_grid import SparseDist, levels_for
from dp_noise import NoiseSchedule, discrete_laplace_share
from pyramid_transform import PyramidVec, unscaled_levels
from reconstruct import reconstruct

# Tolerance for floor(B y) when y is a float sum that should be an exact multiple.
FLOOR_SLACK = 1e-9


class ShuffleMessage(NamedTuple):
    coord: int
    share: int


@dataclass
class MessageBatch:
    """Messages as parallel arrays; one client's output or a shuffled multiset."""
    coords: np.ndarray
    shares: np.ndarray

    def __len__(self) -> int:
        return int(self.coords.size)

    def messages(self) -> list[ShuffleMessage]:
        return [ShuffleMessage(int(c), int(s)) for c, s in zip(self.coords, self.shares)]

    @classmethod
    def concat(cls, batches: Sequence["MessageBatch"]) -> "MessageBatch":
        if not batches:
            return cls(np.zeros(0, np.int64), np.zeros(0, np.int64))
        return cls(
            np.concatenate([b.coords for b in batches]),
            np.concatenate([b.shares for b in batches]),
        )


def compute_r(eps: float, delta: float, m: int, q: int, n: int) -> int:
    """Shares per coordinate needed for (eps, delta) shuffle privacy."""
    if n < 2:
        raise ValueError(f"Share count needs at least 2 users (ln n), got n={n}")
    if not (0.0 < delta < 1.0):
        raise ValueError(f"delta must lie in (0, 1), got {delta}")
    if eps <= 0 or m < 1 or q < 2:
        raise ValueError(f"Invalid parameters eps={eps}, m={m}, q={q}")
    numerator = 2.0 * math.log(math.exp(eps) + 1.0) + 2.0 * math.log(m / delta) + math.log(q)
    return int(math.ceil(numerator / math.log(n) + 1.0))


@dataclass(frozen=True)
class ShuffleParams:
    B: int
    n: int
    q: int
    m: int
    r: int
    eps: float
    delta: float
    schedule: NoiseSchedule
    headroom: int = 1

    @classmethod
    def create(
        cls,
        eps: float,
        delta: float,
        resolution: int,
        n: int,
        B: int,
        w: int = 20,
        gamma: float | None = None,
        mode: str = "theory",
        headroom: int = 1,
    ) -> "ShuffleParams":
        """
        Parameters for n users at the given grid resolution. The modulus is B n, times
        `headroom` when the decoded sums need room past B n / 2.
        """
        if B < 1:
            raise ValueError(f"Scaling factor B must be at least 1, got {B}")
        if headroom < 1:
            raise ValueError(f"Modulus headroom must be at least 1, got {headroom}")
        max_level = levels_for(resolution)
        cfg = AggregationConfig(eps=eps, w=w, gamma=gamma, mode=mode)
        schedule = cfg.schedule(max_level)
        m = sum(4 ** i for i in range(schedule.start_level, max_level + 1))
        q = B * n * headroom
        r = compute_r(eps, delta, m, q, n)
        return cls(B, n, q, m, r, eps, delta, schedule, headroom)

    @property
    def max_level(self) -> int:
        return self.schedule.max_level

    @property
    def start_level(self) -> int:
        return self.schedule.start_level

    @property
    def message_bits(self) -> int:
        """ceil(log2(m q)) bits carry one (coordinate, share) tuple."""
        return max(1, (self.m * self.q - 1).bit_length())

    def level_slices(self) -> list[tuple[int, slice]]:
        out, offset = [], 0
        for i in range(self.start_level, self.max_level + 1):
            out.append((i, slice(offset, offset + 4 ** i)))
            offset += 4 ** i
        return out

    def noise_epsilon(self, level: int) -> float:
        # Noise lives on the B-scaled lattice, where one user moves a level by up to B.
        return self.schedule.epsilon(level) / self.B


def _client_vector(p: SparseDist, params: ShuffleParams) -> np.ndarray:
    if levels_for(p.resolution) != params.max_level:
        raise ValueError(
            f"Client resolution {p.resolution} does not match the protocol's {1 << params.max_level}"
        )
    if not p.is_distribution(1e-9):
        raise ValueError(f"Client input must have total mass 1, got {p.total_mass()}")
    sums = unscaled_levels(p)
    return np.concatenate([sums[i].ravel() for i in range(params.start_level, params.max_level + 1)])


def _encode(p: SparseDist, params: ShuffleParams, rng: np.random.Generator) -> tuple[np.ndarray, MessageBatch]:
    y = _client_vector(p, params)
    z = np.floor(params.B * y + FLOOR_SLACK).astype(np.int64)
    noisy = z.copy()
    for level, sl in params.level_slices():
        noisy[sl] += discrete_laplace_share(params.n, params.noise_epsilon(level), rng, size=4 ** level)

    # r - 1 uniform shares, the last one fixes the sum to z' mod q.
    free = rng.integers(0, params.q, size=(params.m, params.r - 1), dtype=np.int64)
    last = np.mod(noisy - free.sum(axis=1), params.q)
    shares = np.concatenate([free, last[:, None]], axis=1)
    coords = np.repeat(np.arange(params.m, dtype=np.int64), params.r)
    return noisy, MessageBatch(coords, shares.ravel())


def encode_client(p: SparseDist, params: ShuffleParams, rng: np.random.Generator) -> MessageBatch:
    return _encode(p, params, rng)[1]


def _as_batch(messages) -> MessageBatch:
    if isinstance(messages, MessageBatch):
        return messages
    messages = list(messages)
    if messages and isinstance(messages[0], MessageBatch):
        return MessageBatch.concat(messages)
    coords = np.fromiter((msg[0] for msg in messages), dtype=np.int64, count=len(messages))
    shares = np.fromiter((msg[1] for msg in messages), dtype=np.int64, count=len(messages))
    return MessageBatch(coords, shares)


def modular_sums(messages, params: ShuffleParams) -> np.ndarray:
    """Per-coordinate share sums, decoded to the symmetric range (-q/2, q/2]."""
    batch = _as_batch(messages)
    if batch.coords.size and (batch.coords.min() < 0 or batch.coords.max() >= params.m):
        raise ValueError(f"Message coordinate outside [0, {params.m})")
    totals = np.zeros(params.m, dtype=np.int64)
    np.add.at(totals, batch.coords, np.mod(batch.shares, params.q))
    centered = np.mod(totals, params.q)
    centered[centered > params.q // 2] -= params.q
    return centered


def analyze(messages, params: ShuffleParams) -> PyramidVec:
    """y' for reconstruct: decoded sums divided by B and scaled by 2^-i per level."""
    decoded = modular_sums(messages, params).astype(float) / params.B
    levels = [np.zeros((1 << i, 1 << i)) for i in range(params.max_level + 1)]
    for level, sl in params.level_slices():
        side = 1 << level
        levels[level] = decoded[sl].reshape(side, side) * (2.0 ** -level)
    return PyramidVec(levels, params.start_level)


@dataclass
class ShuffleReport:
    messages: int
    messages_per_user: int
    bits_per_user: int
    bytes_per_user: int
    wraparound_violations: int = 0
    violation_coords: list[int] = field(default_factory=list)


@dataclass
class ShuffleResult:
    y_prime: PyramidVec
    report: ShuffleReport


def _wraparound(true_sums: np.ndarray, q: int) -> np.ndarray:
    half = q // 2
    low = -half if q % 2 else -half + 1
    return np.nonzero((true_sums < low) | (true_sums > half))[0]


def simulate(dists: Sequence[SparseDist], params: ShuffleParams, rng: np.random.Generator) -> ShuffleResult:
    """Encode every client, shuffle the pooled messages, analyze."""
    if len(dists) != params.n:
        raise ValueError(f"Protocol was sized for n={params.n} users, got {len(dists)}")
    true_sums = np.zeros(params.m, dtype=np.int64)
    batches = []
    for p in dists:
        noisy, batch = _encode(p, params, rng)
        true_sums += noisy
        batches.append(batch)
    pooled = MessageBatch.concat(batches)
    order = rng.permutation(len(pooled))
    shuffled = MessageBatch(pooled.coords[order], pooled.shares[order])
    y_prime = analyze(shuffled, params)

    violations = _wraparound(true_sums, params.q)
    if violations.size:
        settings.log_warning(
            f"{violations.size} of {params.m} coordinates wrapped around modulo q={params.q}; "
            f"raise B or the modulus headroom"
        )
    per_user = params.r * params.m
    report = ShuffleReport(
        messages=len(shuffled),
        messages_per_user=per_user,
        bits_per_user=per_user * params.message_bits,
        bytes_per_user=per_user * int(math.ceil(params.message_bits / 8)),
        wraparound_violations=int(violations.size),
        violation_coords=[int(c) for c in violations],
    )
    return ShuffleResult(y_prime, report)


def shuffle_aggregate(
    dists: Sequence[SparseDist],
    params: ShuffleParams,
    rng: np.random.Generator,
    w: int = 20,
    placement: str = "spread",
) -> tuple[AggregateResult, ShuffleReport]:
    """The central pipeline with y' computed by the shuffle protocol."""
    validate_inputs(dists)
    result = simulate(dists, params, rng)
    s_hat = reconstruct(result.y_prime, w, params.start_level, placement)
    a_hat = normalize(s_hat, len(dists))
    return (
        AggregateResult(a_hat, s_hat, result.y_prime, params.schedule, is_degenerate(s_hat), params.schedule.spent()),
        result.report,
    )


COMMUNICATION_COLUMNS = ["B", "r", "m", "q", "messages_per_user", "bytes_per_user", "bits_per_user"]


def communication_report(
    B_list: Iterable[int], eps: float, delta: float, resolution: int, n: int, mode: str = "theory"
) -> list[dict]:
    rows = []
    for B in B_list:
        params = ShuffleParams.create(eps, delta, resolution, n, int(B), mode=mode)
        per_user = params.r * params.m
        rows.append({
            "B": params.B,
            "r": params.r,
            "m": params.m,
            "q": params.q,
            "messages_per_user": per_user,
            "bytes_per_user": per_user * int(math.ceil(params.message_bits / 8)),
            "bits_per_user": per_user * params.message_bits,
        })
    return rows
