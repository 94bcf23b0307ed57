"""
Input datasets: synthetic Gaussian-mixture users and check-in ingestion.

Check-in files are tab-separated lines `user_id, timestamp, lat, lon[, location_id]`,
plain or gzip. A dataset on disk is a CSV of (user_id, ix, iy, mass) rows with a JSON
manifest beside it.
"""

from __future__ import annotations

import csv
import dataclasses
import gzip
import json
import math
from collections import Counter, defaultdict
from dataclasses import dataclass, field
from datetime import date, datetime
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

import settings
from core_grid import GridPoint, SparseDist, is_power_of_two
from dp_noise import RngSeed

# (lon_min, lat_min, lon_max, lat_max), open on every side: roughly the continental US.
US_BBOX = (-135.0, 0.0, -60.0, 50.0)
COVARIANCE_RANGE = (1e-4, 1e-2)
# Venue-like clusters: component standard deviations of 0.3% to 1% of the square.
CHECKIN_COVARIANCE_RANGE = (1e-5, 1e-4)
MAX_REJECTION_ROUNDS = 1000


@dataclass(frozen=True)
class MixtureSpec:
    num_gaussians: int
    means: tuple[tuple[float, float], ...]
    covariances: tuple[np.ndarray, ...]
    samples_per_user: int
    n_users: int
    resolution: int = 256
    seed: int = 0

    def __post_init__(self):
        if self.num_gaussians < 1 or self.samples_per_user < 1 or self.n_users < 1:
            raise ValueError("Component, sample and user counts must all be at least 1")
        if len(self.means) != self.num_gaussians or len(self.covariances) != self.num_gaussians:
            raise ValueError(
                f"Expected {self.num_gaussians} means and covariances, "
                f"got {len(self.means)} and {len(self.covariances)}"
            )
        if not is_power_of_two(self.resolution):
            raise ValueError(f"Resolution must be a power of two, got {self.resolution}")
        for i, cov in enumerate(self.covariances):
            cov = np.asarray(cov, dtype=float)
            if cov.shape != (2, 2) or not np.allclose(cov, cov.T):
                raise ValueError(f"Covariance {i} must be a symmetric 2x2 matrix")
            try:
                np.linalg.cholesky(cov)
            except np.linalg.LinAlgError:
                raise ValueError(f"Covariance {i} is not positive definite") from None

    def cholesky_factors(self) -> np.ndarray:
        return np.stack([np.linalg.cholesky(np.asarray(c, dtype=float)) for c in self.covariances])


def random_mixture(
    num_gaussians: int,
    rng: np.random.Generator,
    samples_per_user: int = 20,
    n_users: int = 200,
    resolution: int = 256,
    seed: int = 0,
    covariance_range: tuple[float, float] = COVARIANCE_RANGE,
) -> MixtureSpec:
    """Uniform means; covariance R diag(u1, u2) R^T with u ~ U[covariance_range] and a uniform angle."""
    low, high = covariance_range
    if not (0 < low <= high):
        raise ValueError(f"Covariance range must satisfy 0 < low <= high, got ({low}, {high})")
    means = tuple((float(x), float(y)) for x, y in rng.random((num_gaussians, 2)))
    covariances = []
    for _ in range(num_gaussians):
        u = rng.uniform(low, high, size=2)
        theta = rng.uniform(0.0, math.pi)
        rot = np.array([[math.cos(theta), -math.sin(theta)], [math.sin(theta), math.cos(theta)]])
        cov = rot @ np.diag(u) @ rot.T
        covariances.append((cov + cov.T) / 2.0)
    return MixtureSpec(num_gaussians, means, tuple(covariances), samples_per_user, n_users, resolution, seed)


def sample_mixture(spec: MixtureSpec, count: int, rng: np.random.Generator) -> np.ndarray:
    """`count` points in [0, 1)^2; draws outside the square are redrawn."""
    means = np.asarray(spec.means, dtype=float)
    factors = spec.cholesky_factors()
    out = np.empty((count, 2))
    pending = np.arange(count)
    for _ in range(MAX_REJECTION_ROUNDS):
        if pending.size == 0:
            return out
        comp = rng.integers(0, spec.num_gaussians, size=pending.size)
        z = rng.standard_normal((pending.size, 2))
        pts = means[comp] + np.einsum("kij,kj->ki", factors[comp], z)
        inside = np.all((pts >= 0.0) & (pts < 1.0), axis=1)
        out[pending[inside]] = pts[inside]
        pending = pending[~inside]
    raise RuntimeError(
        f"{pending.size} samples still outside [0, 1)^2 after {MAX_REJECTION_ROUNDS} rounds; "
        f"check the mixture means"
    )


def snap_points(points: np.ndarray, resolution: int) -> tuple[np.ndarray, np.ndarray]:
    idx = np.clip(np.floor(np.asarray(points) * resolution).astype(np.int64), 0, resolution - 1)
    return idx[:, 0], idx[:, 1]


def _user_dist(ix: np.ndarray, iy: np.ndarray, resolution: int) -> SparseDist:
    counts = Counter(zip(ix.tolist(), iy.tolist()))
    return SparseDist.from_mapping(resolution, counts).normalized()


def sparsity(dists: Sequence[SparseDist]) -> float:
    """Fraction of grid points in the support of the users' sum."""
    if not dists:
        return 0.0
    support = set()
    for d in dists:
        support.update(d.entries)
    return len(support) / float(dists[0].resolution ** 2)


def synth_users(spec: MixtureSpec) -> tuple[list[SparseDist], float]:
    rng = RngSeed(spec.seed).generator()
    users = []
    for _ in range(spec.n_users):
        pts = sample_mixture(spec, spec.samples_per_user, rng)
        ix, iy = snap_points(pts, spec.resolution)
        users.append(_user_dist(ix, iy, spec.resolution))
    return users, sparsity(users)


def synth_users_to_sparsity(
    spec: MixtureSpec, target: float, max_rounds: int = 12
) -> tuple[list[SparseDist], float, int]:
    """
    Double samples_per_user until the dataset reaches the target sparsity.
    Returns the users, the reached sparsity and the samples per user used.
    """
    if not (0.0 < target <= 1.0):
        raise ValueError(f"Target sparsity must lie in (0, 1], got {target}")
    current = spec
    for _ in range(max_rounds):
        users, reached = synth_users(current)
        if reached >= target:
            return users, reached, current.samples_per_user
        current = dataclasses.replace(current, samples_per_user=current.samples_per_user * 2)
    settings.log_warning(f"Sparsity {reached:.4f} still below target {target} after {max_rounds} doublings")
    return users, reached, current.samples_per_user // 2


@dataclass(frozen=True)
class CheckinRecord:
    user_id: str
    timestamp: str
    lat: float
    lon: float
    location_id: str | None = None

    def __post_init__(self):
        if not (-90.0 <= self.lat <= 90.0):
            raise ValueError(f"Latitude {self.lat} outside [-90, 90]")
        if not (-180.0 <= self.lon <= 180.0):
            raise ValueError(f"Longitude {self.lon} outside [-180, 180]")

    @property
    def day(self) -> date:
        return parse_timestamp(self.timestamp).date()


def parse_timestamp(value: str) -> datetime:
    text = value.strip()
    if text.endswith("Z"):
        text = text[:-1] + "+00:00"
    return datetime.fromisoformat(text)


def parse_checkins(lines: Iterable[str]) -> tuple[list[CheckinRecord], int]:
    """Parsed records plus the number of malformed lines that were skipped."""
    records: list[CheckinRecord] = []
    skipped = 0
    try:
        for lineno, raw in enumerate(lines, start=1):
            line = raw.rstrip("\r\n")
            if not line.strip():
                continue
            parts = line.split("\t")
            try:
                if len(parts) not in (4, 5) or not parts[0]:
                    raise ValueError(f"expected 4 or 5 fields, got {len(parts)}")
                parse_timestamp(parts[1])
                record = CheckinRecord(
                    user_id=parts[0],
                    timestamp=parts[1],
                    lat=float(parts[2]),
                    lon=float(parts[3]),
                    location_id=parts[4] if len(parts) == 5 and parts[4] else None,
                )
            except ValueError as e:
                skipped += 1
                settings.log_debug(f"Skipping check-in line {lineno}: {e}")
                continue
            records.append(record)
    except (OSError, UnicodeDecodeError) as e:
        raise ValueError(f"Unable to read check-in stream: {e}") from e
    if skipped:
        settings.log_warning(f"Skipped {skipped} malformed check-in lines")
    return records, skipped


def filter_dates(
    records: Iterable[CheckinRecord], start_date: date | None = None, end_date: date | None = None
) -> list[CheckinRecord]:
    """Records whose day lies in [start_date, end_date]; either bound may be open."""
    out = []
    for r in records:
        day = r.day
        if start_date is not None and day < start_date:
            continue
        if end_date is not None and day > end_date:
            continue
        out.append(r)
    return out


def read_checkins(
    path: str | Path, start_date: date | None = None, end_date: date | None = None
) -> tuple[list[CheckinRecord], int]:
    path = Path(path)
    if not path.is_file():
        raise ValueError(f"Check-in file '{path}' does not exist")
    opener = gzip.open if path.suffix == ".gz" else open
    with opener(path, "rt", encoding="utf-8") as f:
        records, skipped = parse_checkins(f)
    if start_date is not None or end_date is not None:
        records = filter_dates(records, start_date, end_date)
    return records, skipped


def filter_bbox(records: Iterable[CheckinRecord], bbox=US_BBOX) -> list[CheckinRecord]:
    lon0, lat0, lon1, lat1 = bbox
    return [r for r in records if lon0 < r.lon < lon1 and lat0 < r.lat < lat1]


@dataclass
class CellDataset:
    rank: int
    cx: int
    cy: int
    # (lon_min, lat_min, lon_max, lat_max) of the coarse cell.
    bounds: tuple[float, float, float, float]
    checkins: int
    users: dict[str, SparseDist] = field(default_factory=dict)
    meets_min_users: bool = False

    @property
    def resolution(self) -> int:
        return next(iter(self.users.values())).resolution if self.users else 0


def build_cells(
    records: Iterable[CheckinRecord],
    bbox=US_BBOX,
    coarse: int = 300,
    top_cells: int = 30,
    resolution: int = 256,
    min_users: int = 200,
) -> list[CellDataset]:
    """
    Partition the bbox into coarse x coarse cells, keep the top_cells busiest, and
    build every user's normalized check-in distribution inside each kept cell.
    """
    if not is_power_of_two(resolution):
        raise ValueError(f"Resolution must be a power of two, got {resolution}")
    if coarse < 1 or top_cells < 1:
        raise ValueError("Coarse grid size and top_cells must be at least 1")
    kept = filter_bbox(records, bbox)
    if not kept:
        settings.log_warning(f"No check-ins inside bbox {bbox}")
        return []

    lon0, lat0, lon1, lat1 = bbox
    u = np.array([(r.lon - lon0) / (lon1 - lon0) for r in kept]) * coarse
    v = np.array([(r.lat - lat0) / (lat1 - lat0) for r in kept]) * coarse
    cx = np.clip(np.floor(u).astype(np.int64), 0, coarse - 1)
    cy = np.clip(np.floor(v).astype(np.int64), 0, coarse - 1)

    counts = Counter(zip(cx.tolist(), cy.tolist()))
    # Count first, then cell index (cy, cx) ascending.
    ranked = sorted(counts, key=lambda c: (-counts[c], c[1], c[0]))[:top_cells]

    cells = []
    for rank, (ccx, ccy) in enumerate(ranked):
        in_cell = np.nonzero((cx == ccx) & (cy == ccy))[0]
        local = np.stack([u[in_cell] - ccx, v[in_cell] - ccy], axis=1)
        ix, iy = snap_points(local, resolution)
        per_user: dict[str, Counter] = defaultdict(Counter)
        for k, idx in enumerate(in_cell):
            per_user[kept[idx].user_id][(int(ix[k]), int(iy[k]))] += 1
        users = {
            uid: SparseDist.from_mapping(resolution, c).normalized()
            for uid, c in sorted(per_user.items())
        }
        width, height = (lon1 - lon0) / coarse, (lat1 - lat0) / coarse
        bounds = (lon0 + ccx * width, lat0 + ccy * height, lon0 + (ccx + 1) * width, lat0 + (ccy + 1) * height)
        cells.append(CellDataset(rank, ccx, ccy, bounds, len(in_cell), users, len(users) >= min_users))

    qualifying = sum(1 for c in cells if c.meets_min_users)
    settings.log_info(f"{qualifying} of {len(cells)} top cells have at least {min_users} users")
    return cells


def manifest_path(path: str | Path) -> Path:
    path = Path(path)
    return path.with_name(path.stem + ".manifest.json")


def write_dataset(path: str | Path, users: Mapping[str, SparseDist], manifest: dict | None = None) -> Path:
    """Write users as CSV rows (user_id, ix, iy, mass) plus a JSON manifest; returns the manifest path."""
    if not users:
        raise ValueError("Refusing to write an empty dataset")
    path = Path(path)
    resolution = next(iter(users.values())).resolution
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="", encoding="utf-8") as f:
        writer = csv.writer(f)
        writer.writerow(["user_id", "ix", "iy", "mass"])
        for uid, dist in users.items():
            if dist.resolution != resolution:
                raise ValueError(f"User {uid} has resolution {dist.resolution}, expected {resolution}")
            for p in dist.support():
                writer.writerow([uid, p.ix, p.iy, repr(dist.entries[p])])
    doc = {"delta": resolution, "users": len(users)}
    doc.update(manifest or {})
    mpath = manifest_path(path)
    mpath.write_text(json.dumps(doc, indent=2, ensure_ascii=True), encoding="utf-8")
    return mpath


def read_dataset(path: str | Path) -> tuple[dict[str, SparseDist], dict]:
    path = Path(path)
    if not path.is_file():
        raise ValueError(f"Dataset file '{path}' does not exist")
    mpath = manifest_path(path)
    manifest = json.loads(mpath.read_text(encoding="utf-8")) if mpath.is_file() else {}

    rows: dict[str, dict[tuple[int, int], float]] = defaultdict(dict)
    max_index = 0
    with open(path, "r", newline="", encoding="utf-8") as f:
        reader = csv.DictReader(f)
        if reader.fieldnames != ["user_id", "ix", "iy", "mass"]:
            raise ValueError(f"Dataset '{path}' must have header user_id,ix,iy,mass, got {reader.fieldnames}")
        for row in reader:
            key = (int(row["ix"]), int(row["iy"]))
            rows[row["user_id"]][key] = rows[row["user_id"]].get(key, 0.0) + float(row["mass"])
            max_index = max(max_index, *key)

    resolution = manifest.get("delta")
    if resolution is None:
        resolution = 1
        while resolution <= max_index:
            resolution *= 2
        settings.log_warning(f"No manifest beside '{path}'; inferred resolution {resolution}")
    users = {uid: SparseDist.from_mapping(int(resolution), entries) for uid, entries in rows.items()}
    return users, manifest


def dataset_from_points(points: Sequence[GridPoint]) -> dict[str, SparseDist]:
    """One indicator user per point, keyed u0, u1, ..."""
    return {f"u{i}": SparseDist(p.resolution, {p: 1.0}) for i, p in enumerate(points)}
