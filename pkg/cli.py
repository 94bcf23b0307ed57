"""
Experiment harness for private EMD heatmaps.

Subcommands: synth, ingest, aggregate, heatmap, metrics, shuffle-sim, coreset-check
and sweep. Every run writes a JSON manifest (config, seed, library versions, outputs)
beside its outputs.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import itertools
import json
import math
import sys
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from datetime import date
from pathlib import Path
from typing import Any, Sequence

import numpy as np

import settings
from aggregator import AggregationConfig, aggregate_central, aggregate_dense, baseline_laplace, coreset
from clustering import coreset_check
from core_grid import GridPoint, SparseDist, coarsen, embed_rectangle, levels_for, sum_dense
from datagen import (
    COVARIANCE_RANGE,
    build_cells,
    dataset_from_points,
    random_mixture,
    read_checkins,
    read_dataset,
    sample_mixture,
    snap_points,
    synth_users,
    synth_users_to_sparsity,
    write_dataset,
)
from dp_noise import RngSeed
from grid_io import read_heatmap, write_heatmap, write_manifest
from heatmap_metrics import heatmap, heatmap_padded, metrics
from reconstruct import PLACEMENTS
from shuffle_sim import COMMUNICATION_COLUMNS, ShuffleParams, communication_report, shuffle_aggregate

REPO_ROOT = Path(__file__).resolve().parent

SWEEP_KINDS = ("eps", "users", "resolution", "sparsity", "shuffle")
ALGORITHMS = ("ours", "baseline", "baseline-top", "dense")
METRIC_COLUMNS = [
    "run_id", "algorithm", "eps", "n", "delta_grid", "w", "trial",
    "sim", "pearson", "kl", "emd", "emd_is_surrogate", "wall_ms",
    "variant", "sparsity", "error",
]
SUMMARY_METRICS = ("sim", "pearson", "kl", "emd")
DEFAULT_SIGMA = 0.02


def parse_list(raw, cast=float) -> list:
    """'1,2,5' or a YAML list -> typed list."""
    if raw is None:
        return []
    if isinstance(raw, (list, tuple)):
        return [cast(v) for v in raw]
    if isinstance(raw, (int, float)):
        return [cast(raw)]
    return [cast(v.strip()) for v in str(raw).split(",") if v.strip()]


def parse_rect(raw) -> tuple[int, int] | None:
    if not raw:
        return None
    if isinstance(raw, (list, tuple)):
        width, height = raw
    else:
        try:
            width, height = str(raw).lower().split("x")
        except ValueError:
            raise ValueError(f"Rectangle must look like WIDTHxHEIGHT, got '{raw}'") from None
    return int(width), int(height)


def resolve_cli_path(raw_path: str) -> Path:
    return Path(str(raw_path or "").strip()).expanduser()


def _users_list(users: dict[str, SparseDist]) -> list[SparseDist]:
    return [users[k] for k in users]


def _average(users: Sequence[SparseDist]) -> np.ndarray:
    if not users:
        raise ValueError("Dataset has no users")
    resolution = users[0].resolution
    return sum_dense(users, resolution) / len(users)


@dataclass
class ExperimentConfig:
    kind: str = "eps"
    eps_list: list[float] = field(default_factory=lambda: [1.0])
    n_list: list[int] = field(default_factory=lambda: [200])
    delta_list: list[int] = field(default_factory=lambda: [256])
    w: int = 20
    gamma: float | None = None
    mode: str = "experiment"
    sigma: float = DEFAULT_SIGMA
    trials: int = 2
    seed: int = 0
    algorithms: list[str] = field(default_factory=lambda: ["ours", "baseline", "baseline-top"])
    thresholds: list[float] = field(default_factory=lambda: [1.0, 5.0, 10.0])
    B_list: list[int] = field(default_factory=lambda: [64, 256, 1024])
    privacy_delta: float = 1e-5
    headroom: int = 4
    num_gaussians: list[int] = field(default_factory=lambda: [20])
    samples_per_user: list[int] = field(default_factory=lambda: [20])
    covariance_range: list[float] = field(default_factory=lambda: list(COVARIANCE_RANGE))
    placement: str = "spread"
    rect: tuple[int, int] | None = None
    input: str | None = None
    out_dir: str = "runs/sweep"
    write_pgm: bool = False
    timing: bool = True
    workers: int = settings.WORKERS

    def __post_init__(self):
        if self.kind not in SWEEP_KINDS:
            raise ValueError(f"Sweep kind must be one of {SWEEP_KINDS}, got '{self.kind}'")
        for name in ("eps_list", "n_list", "delta_list", "algorithms", "num_gaussians", "samples_per_user"):
            if not getattr(self, name):
                raise ValueError(f"Sweep option '{name}' must not be empty")
        unknown = [a for a in self.algorithms if a not in ALGORITHMS]
        if unknown:
            raise ValueError(f"Unknown algorithms {unknown}; choose from {ALGORITHMS}")
        if self.kind == "shuffle" and not self.B_list:
            raise ValueError("A shuffle sweep needs at least one B value")
        if self.kind == "sparsity" and self.input:
            raise ValueError("A sparsity sweep generates its own data; drop --input")
        if self.trials < 1 or self.sigma <= 0:
            raise ValueError("Sweeps need trials >= 1 and sigma > 0")
        if any(e <= 0 for e in self.eps_list) or any(n < 1 for n in self.n_list):
            raise ValueError("Every eps must be positive and every n at least 1")
        if len(self.covariance_range) != 2 or not (0 < self.covariance_range[0] <= self.covariance_range[1]):
            raise ValueError(f"covariance_range must be two values 0 < low <= high, got {self.covariance_range}")
        if self.placement not in PLACEMENTS:
            raise ValueError(f"Placement must be one of {PLACEMENTS}, got '{self.placement}'")

    @classmethod
    def from_sources(cls, file_values: dict, overrides: dict) -> "ExperimentConfig":
        """Dataclass defaults, then the config file, then explicit command-line flags."""
        known = {f.name for f in dataclasses.fields(cls)}
        merged: dict[str, Any] = {}
        for source in (file_values, overrides):
            for key, value in source.items():
                key = key.replace("-", "_")
                if key not in known:
                    raise ValueError(f"Unknown sweep option '{key}'")
                if value is not None:
                    merged[key] = value
        casts = {
            "eps_list": float, "n_list": int, "delta_list": int, "algorithms": str,
            "thresholds": float, "B_list": int, "num_gaussians": int, "samples_per_user": int,
            "covariance_range": float,
        }
        for key, cast in casts.items():
            if key in merged:
                merged[key] = parse_list(merged[key], cast)
        if "rect" in merged:
            merged["rect"] = parse_rect(merged["rect"])
        return cls(**merged)


@dataclass(frozen=True)
class SweepTask:
    index: int
    eps: float
    n: int
    delta: int
    variant_index: int
    variant: str
    trial: int


def sweep_variants(cfg: ExperimentConfig) -> list[tuple[str, dict]]:
    if cfg.kind == "sparsity":
        return [
            (f"g{g}-s{s}", {"num_gaussians": g, "samples_per_user": s})
            for g in cfg.num_gaussians for s in cfg.samples_per_user
        ]
    base = {"num_gaussians": cfg.num_gaussians[0], "samples_per_user": cfg.samples_per_user[0]}
    if cfg.kind == "shuffle":
        return [("central", base)] + [(f"B{b}", dict(base, B=b)) for b in cfg.B_list]
    return [("default", base)]


def sweep_tasks(cfg: ExperimentConfig) -> list[SweepTask]:
    deltas = [embed_rectangle(*cfg.rect)[0]] if cfg.rect else cfg.delta_list
    variants = sweep_variants(cfg)
    tasks = []
    grid = itertools.product(cfg.eps_list, cfg.n_list, deltas, range(len(variants)), range(cfg.trials))
    for index, (eps, n, delta, vi, trial) in enumerate(grid):
        tasks.append(SweepTask(index, eps, n, delta, vi, variants[vi][0], trial))
    return tasks


def trial_users(task: SweepTask, cfg: ExperimentConfig, variant: dict, dataset) -> tuple[list[SparseDist], float]:
    """Users of one trial; the data seed depends only on (seed, trial, variant) so runs are paired."""
    data_rng = RngSeed(cfg.seed, 0).child(task.trial).child(task.variant_index).generator()
    if dataset is not None:
        if task.n > len(dataset):
            raise ValueError(f"Cannot sample {task.n} users from a dataset of {len(dataset)}")
        chosen = data_rng.choice(len(dataset), size=task.n, replace=False)
        users = [dataset[int(i)] for i in sorted(chosen)]
        if users[0].resolution < task.delta:
            raise ValueError(f"Dataset resolution {users[0].resolution} is coarser than delta={task.delta}")
        users = [coarsen(u, task.delta) for u in users]
    else:
        spec = random_mixture(
            variant["num_gaussians"],
            data_rng,
            samples_per_user=variant["samples_per_user"],
            n_users=task.n,
            resolution=task.delta,
            seed=int(data_rng.integers(2 ** 31)),
            covariance_range=tuple(cfg.covariance_range),
        )
        users, _ = synth_users(spec)
    if cfg.rect:
        users = [_squeeze_to_rect(u, *cfg.rect) for u in users]
    support = set()
    for u in users:
        support.update(u.entries)
    return users, len(support) / float(task.delta ** 2)


def _squeeze_to_rect(dist: SparseDist, width: int, height: int) -> SparseDist:
    delta = dist.resolution
    return SparseDist.from_mapping(
        delta, {(p.ix * width // delta, p.iy * height // delta): m for p, m in dist.entries.items()}
    )


def algorithm_names(cfg: ExperimentConfig, task: SweepTask) -> list[str]:
    if cfg.kind == "shuffle":
        return ["ours"] if task.variant == "central" else ["ours-shuffle"]
    names = []
    for a in cfg.algorithms:
        if a == "baseline-top":
            names.extend(f"baseline-top{t:g}" for t in cfg.thresholds)
        else:
            names.append(a)
    return names


def run_algorithm(name: str, users, s, task: SweepTask, cfg: ExperimentConfig, variant: dict, rng) -> SparseDist:
    if name == "ours":
        agg_cfg = AggregationConfig(
            eps=task.eps, w=cfg.w, gamma=cfg.gamma, mode=cfg.mode, seed=cfg.seed, placement=cfg.placement
        )
        return aggregate_central(users, agg_cfg, rng=rng, s=s).a_hat
    if name == "dense":
        return aggregate_dense(users, task.eps, rng=rng).a_hat
    if name == "baseline":
        return baseline_laplace(users, task.eps, rng=rng, s=s)
    if name.startswith("baseline-top"):
        return baseline_laplace(users, task.eps, threshold_pct=float(name[len("baseline-top"):]), rng=rng, s=s)
    if name == "ours-shuffle":
        params = ShuffleParams.create(
            task.eps, cfg.privacy_delta, task.delta, task.n, variant["B"],
            w=cfg.w, gamma=cfg.gamma, mode=cfg.mode, headroom=cfg.headroom,
        )
        result, _ = shuffle_aggregate(users, params, rng, cfg.w, cfg.placement)
        return result.a_hat
    raise ValueError(f"Unknown algorithm '{name}'")


def _mask(cfg: ExperimentConfig):
    return embed_rectangle(*cfg.rect)[1] if cfg.rect else None


def run_trial(task: SweepTask, cfg: ExperimentConfig, dataset) -> list[dict]:
    variant = sweep_variants(cfg)[task.variant_index][1]
    run_id = f"{cfg.kind}-{task.index:04d}"
    base = {
        "run_id": run_id, "eps": task.eps, "n": task.n, "delta_grid": task.delta, "w": cfg.w,
        "trial": task.trial, "variant": task.variant,
        "sim": "", "pearson": "", "kl": "", "emd": "", "emd_is_surrogate": "", "wall_ms": "", "error": "",
    }
    try:
        users, sparsity = trial_users(task, cfg, variant, dataset)
    except Exception as e:
        settings.log_warning(f"{run_id}: data preparation failed: {e}")
        return [dict(base, algorithm=name, sparsity="", error=f"{type(e).__name__}: {e}")
                for name in algorithm_names(cfg, task)]

    s = sum_dense(users, task.delta)
    reference = heatmap(s / task.n, cfg.sigma)
    mask = _mask(cfg)
    pgm_dir = Path(cfg.out_dir) / "heatmaps"
    if cfg.write_pgm:
        write_heatmap(pgm_dir / f"{run_id}_true.pgm", reference.values)

    noise_seed = RngSeed(cfg.seed, 1).child(task.index)
    rows = []
    for k, name in enumerate(algorithm_names(cfg, task)):
        row = dict(base, algorithm=name, sparsity=sparsity)
        started = time.perf_counter()
        try:
            a_hat = run_algorithm(name, users, s, task, cfg, variant, noise_seed.child(k).generator())
            estimate = heatmap(a_hat, cfg.sigma)
            row.update(metrics(reference, estimate, mask))
            if cfg.write_pgm:
                write_heatmap(pgm_dir / f"{run_id}_{name}.pgm", estimate.values)
        except Exception as e:
            row["error"] = f"{type(e).__name__}: {e}"
            settings.log_warning(f"{run_id} {name} failed: {e}")
        if cfg.timing:
            row["wall_ms"] = round((time.perf_counter() - started) * 1000.0, 3)
        rows.append(row)
    settings.log_debug(f"{run_id} done: eps={task.eps} n={task.n} delta={task.delta} {task.variant}")
    return rows


def summarize(rows: Sequence[dict]) -> list[dict]:
    """Mean and 95% normal-approximation half-width per (algorithm, eps, n, delta, variant)."""
    groups: dict[tuple, list[dict]] = {}
    for row in rows:
        key = (row["algorithm"], row["eps"], row["n"], row["delta_grid"], row.get("variant", ""))
        groups.setdefault(key, []).append(row)
    out = []
    for (algorithm, eps, n, delta, variant), members in groups.items():
        ok = [r for r in members if not r.get("error")]
        summary = {
            "algorithm": algorithm, "eps": eps, "n": n, "delta_grid": delta, "variant": variant,
            "trials": len(ok), "failures": len(members) - len(ok),
        }
        for metric in SUMMARY_METRICS:
            values = np.array([float(r[metric]) for r in ok], dtype=float)
            if values.size == 0:
                summary[f"{metric}_mean"], summary[f"{metric}_ci95"] = "", ""
                continue
            stderr = values.std(ddof=1) / math.sqrt(values.size) if values.size > 1 else 0.0
            summary[f"{metric}_mean"] = float(values.mean())
            summary[f"{metric}_ci95"] = 1.96 * float(stderr)
        out.append(summary)
    return out


def write_rows(path: Path, rows: Sequence[dict], columns: Sequence[str]) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="", encoding="utf-8") as f:
        writer = csv.DictWriter(f, fieldnames=list(columns), extrasaction="ignore")
        writer.writeheader()
        for row in rows:
            writer.writerow(row)
    return path


def run_sweep(cfg: ExperimentConfig) -> tuple[Path, Path]:
    out_dir = Path(cfg.out_dir)
    try:
        out_dir.mkdir(parents=True, exist_ok=True)
    except OSError as e:
        raise ValueError(f"Output directory '{out_dir}' is not writable: {e}") from e

    dataset = None
    if cfg.input:
        users, _ = read_dataset(resolve_cli_path(cfg.input))
        dataset = _users_list(users)
    tasks = sweep_tasks(cfg)
    settings.log_info(f"Sweep '{cfg.kind}': {len(tasks)} trials on {max(1, cfg.workers)} workers")

    with ThreadPoolExecutor(max_workers=max(1, cfg.workers)) as pool:
        results = list(pool.map(lambda t: run_trial(t, cfg, dataset), tasks))
    rows = [row for chunk in results for row in chunk]

    metrics_path = write_rows(out_dir / "metrics.csv", rows, METRIC_COLUMNS)
    summary = summarize(rows)
    summary_columns = ["algorithm", "eps", "n", "delta_grid", "variant", "trials", "failures"]
    for metric in SUMMARY_METRICS:
        summary_columns += [f"{metric}_mean", f"{metric}_ci95"]
    summary_path = write_rows(out_dir / "summary.csv", summary, summary_columns)
    write_manifest(out_dir, "sweep", dataclasses.asdict(cfg), [metrics_path, summary_path])
    failures = sum(1 for r in rows if r.get("error"))
    if failures:
        settings.log_warning(f"{failures} of {len(rows)} algorithm runs failed; see the error column")
    settings.log_info(f"Wrote {metrics_path} and {summary_path}")
    return metrics_path, summary_path


def cmd_synth(args) -> int:
    rng = RngSeed(args.seed).generator()
    spec = random_mixture(
        args.num_gaussians, rng, samples_per_user=args.samples_per_user,
        n_users=args.n_users, resolution=args.delta, seed=int(rng.integers(2 ** 31)),
    )
    if args.target_sparsity:
        users, reached, samples = synth_users_to_sparsity(spec, args.target_sparsity)
    else:
        users, reached = synth_users(spec)
        samples = spec.samples_per_user
    out = resolve_cli_path(args.out)
    write_dataset(out, {f"u{i}": u for i, u in enumerate(users)}, {
        "config": vars(args) | {"func": None},
        "seed": args.seed,
        "sparsity": reached,
        "samples_per_user": samples,
        "means": [list(m) for m in spec.means],
    })
    settings.log_info(f"Wrote {len(users)} users to {out} (sparsity {reached:.4f})")
    return 0


def cmd_ingest(args) -> int:
    start = date.fromisoformat(args.start_date) if args.start_date else None
    end = date.fromisoformat(args.end_date) if args.end_date else None
    records, skipped = read_checkins(resolve_cli_path(args.input), start, end)
    cells = build_cells(
        records, coarse=args.coarse, top_cells=args.top_cells,
        resolution=args.delta, min_users=args.min_users,
    )
    out_dir = resolve_cli_path(args.out_dir)
    outputs = []
    for cell in cells:
        if not cell.users:
            continue
        path = out_dir / f"cell_{cell.rank:02d}.csv"
        write_dataset(path, cell.users, {
            "rank": cell.rank, "coarse_cell": [cell.cx, cell.cy], "bounds": list(cell.bounds),
            "checkins": cell.checkins, "meets_min_users": cell.meets_min_users,
        })
        outputs.append(path)
    config = vars(args) | {"func": None, "records": len(records), "skipped_lines": skipped}
    write_manifest(out_dir, "ingest", config, outputs)
    settings.log_info(f"Wrote {len(outputs)} cell datasets to {out_dir}")
    return 0


def cmd_aggregate(args) -> int:
    users, _ = read_dataset(resolve_cli_path(args.input))
    dists = _users_list(users)
    rng = RngSeed(args.seed).generator()
    extra: dict[str, Any] = {}
    if args.algorithm == "ours":
        cfg = AggregationConfig(
            eps=args.eps, w=args.w, gamma=args.gamma, mode=args.mode, seed=args.seed, placement=args.placement
        )
        result = aggregate_central(dists, cfg, rng=rng)
        a_hat = result.a_hat
        extra = {"degenerate": result.degenerate, "epsilon_spent": result.epsilon_spent,
                 "level_epsilons": list(result.schedule.epsilons)}
    elif args.algorithm == "dense":
        result = aggregate_dense(dists, args.eps, rng=rng)
        a_hat = result.a_hat
        extra = {"degenerate": result.degenerate, "epsilon_spent": result.epsilon_spent,
                 "coarse_resolution": result.coarse_resolution}
    else:
        a_hat = baseline_laplace(dists, args.eps, threshold_pct=args.threshold, rng=rng)
    config = vars(args) | {"func": None}
    write_dataset(resolve_cli_path(args.out), {"aggregate": a_hat}, {
        "config": config, "seed": args.seed, "n": len(dists), **extra,
    })
    settings.log_info(f"Aggregated {len(dists)} users into {args.out}")
    return 0


def cmd_heatmap(args) -> int:
    users, _ = read_dataset(resolve_cli_path(args.input))
    average = _average(_users_list(users))
    grid = heatmap_padded(average, args.sigma, args.pad) if args.padded else heatmap(average, args.sigma)
    out = write_heatmap(resolve_cli_path(args.out), grid.values)
    write_manifest(out.parent, out.stem, vars(args) | {"func": None}, [out])
    settings.log_info(f"Wrote heatmap {out} ({grid.shape[1]}x{grid.shape[0]}, sigma={args.sigma})")
    return 0


def cmd_metrics(args) -> int:
    a = read_heatmap(resolve_cli_path(args.a))
    b = read_heatmap(resolve_cli_path(args.b))
    mask = None
    rect = parse_rect(args.rect)
    if rect:
        delta, mask = embed_rectangle(*rect)
        if mask.shape != a.shape:
            raise ValueError(f"Rectangle {rect} embeds into {delta}x{delta}, heatmaps are {a.shape}")
    result = metrics(a, b, mask)
    text = json.dumps(result, indent=2, sort_keys=True)
    print(text)
    if args.out:
        out = resolve_cli_path(args.out)
        out.parent.mkdir(parents=True, exist_ok=True)
        out.write_text(text + "\n", encoding="utf-8")
    return 0


def cmd_shuffle_sim(args) -> int:
    B_list = parse_list(args.B, int)
    if not B_list:
        raise ValueError("--B needs at least one scaling factor")
    rows = communication_report(B_list, args.eps, args.privacy_delta, args.delta, args.n, mode=args.mode)
    out = write_rows(resolve_cli_path(args.out), rows, COMMUNICATION_COLUMNS)
    outputs = [out]
    if args.input:
        users, _ = read_dataset(resolve_cli_path(args.input))
        dists = [coarsen(u, args.delta) for u in _users_list(users)][:args.n]
        if len(dists) < args.n:
            raise ValueError(f"Dataset has {len(dists)} users, --n asks for {args.n}")
        reference = heatmap(_average(dists), args.sigma)
        utility = []
        for i, B in enumerate(B_list):
            params = ShuffleParams.create(
                args.eps, args.privacy_delta, args.delta, args.n, B, mode=args.mode, headroom=args.headroom
            )
            result, report = shuffle_aggregate(dists, params, RngSeed(args.seed).child(i).generator())
            row = {"B": B, "wraparound_violations": report.wraparound_violations}
            row.update(metrics(reference, heatmap(result.a_hat, args.sigma)))
            utility.append(row)
        columns = ["B", "wraparound_violations", "sim", "pearson", "kl", "emd", "emd_is_surrogate"]
        outputs.append(write_rows(out.with_name(out.stem + "_utility.csv"), utility, columns))
    write_manifest(out.parent, out.stem, vars(args) | {"func": None}, outputs)
    settings.log_info(f"Wrote communication report {out}")
    return 0


def cmd_coreset_check(args) -> int:
    if args.input:
        users, _ = read_dataset(resolve_cli_path(args.input))
        points = []
        for uid, dist in users.items():
            if len(dist.entries) != 1:
                raise ValueError(f"User {uid} is not a single point; coreset checks need indicator inputs")
            points.append(next(iter(dist.entries)))
    else:
        rng = RngSeed(args.seed).generator()
        spec = random_mixture(args.num_gaussians, rng, samples_per_user=1, n_users=args.points, resolution=args.delta)
        ix, iy = snap_points(sample_mixture(spec, args.points, rng), args.delta)
        points = [GridPoint(int(x), int(y), args.delta) for x, y in zip(ix, iy)]
        points_out = resolve_cli_path(args.out).with_suffix(".points.csv")
        write_dataset(points_out, dataset_from_points(points), {"seed": args.seed, "means": [list(m) for m in spec.means]})
    levels_for(points[0].resolution)
    s_hat = coreset(points, args.eps, w=args.w, seed=args.seed, mode=args.mode)
    rows = [
        coreset_check(points, s_hat, k, args.lam, args.eps, args.candidate_delta).as_row()
        for k in parse_list(args.k, int)
    ]
    out = write_rows(resolve_cli_path(args.out), rows, ["k", "lambda", "eps", "empirical_kappa", "fitted_C"])
    write_manifest(out.parent, out.stem, vars(args) | {"func": None}, [out])
    settings.log_info(f"Wrote coreset report {out}")
    return 0


def cmd_sweep(args) -> int:
    file_values = settings.load_config_file(args.config) if args.config else {}
    overrides = {
        "kind": args.kind, "eps_list": args.eps, "n_list": args.n, "delta_list": args.delta,
        "w": args.w, "gamma": args.gamma, "mode": args.mode, "sigma": args.sigma,
        "trials": args.trials, "seed": args.seed, "algorithms": args.algorithms,
        "thresholds": args.thresholds, "B_list": args.B, "privacy_delta": args.privacy_delta,
        "num_gaussians": args.num_gaussians, "samples_per_user": args.samples_per_user,
        "covariance_range": args.covariance_range, "placement": args.placement,
        "rect": args.rect, "input": args.input, "out_dir": args.out_dir, "workers": args.workers,
        "write_pgm": True if args.pgm else None, "timing": False if args.no_timing else None,
    }
    run_sweep(ExperimentConfig.from_sources(file_values, overrides))
    return 0


def parse_args(argv: Sequence[str] | None = None) -> argparse.Namespace:
    parser = argparse.ArgumentParser(prog="emd-heatmaps", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="Generate a synthetic Gaussian-mixture dataset")
    p.add_argument("--num-gaussians", type=int, default=20)
    p.add_argument("--n-users", type=int, default=200)
    p.add_argument("--samples-per-user", type=int, default=20)
    p.add_argument("--delta", type=int, default=256, help="Grid resolution (power of two)")
    p.add_argument("--target-sparsity", type=float, default=None,
                   help="Double samples per user until this support fraction is reached")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True, help="Dataset CSV path")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("ingest", help="Build per-cell datasets from a check-in file")
    p.add_argument("--input", required=True, help="Tab-separated check-ins (.txt or .gz)")
    p.add_argument("--out-dir", required=True)
    p.add_argument("--coarse", type=int, default=300)
    p.add_argument("--top-cells", type=int, default=30)
    p.add_argument("--delta", type=int, default=256)
    p.add_argument("--min-users", type=int, default=200)
    p.add_argument("--start-date", default=None, help="Inclusive YYYY-MM-DD")
    p.add_argument("--end-date", default=None, help="Inclusive YYYY-MM-DD")
    p.set_defaults(func=cmd_ingest)

    p = sub.add_parser("aggregate", help="Privately aggregate a dataset")
    p.add_argument("--input", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--algorithm", choices=["ours", "dense", "baseline"], default="ours")
    p.add_argument("--eps", type=float, required=True)
    p.add_argument("--w", type=int, default=20)
    p.add_argument("--gamma", type=float, default=None)
    p.add_argument("--mode", choices=["theory", "experiment"], default="experiment")
    p.add_argument("--placement", choices=PLACEMENTS, default="spread",
                   help="Where recovered mass of left-out subtrees goes")
    p.add_argument("--threshold", type=float, default=None, help="Baseline: keep the top t percent")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_aggregate)

    p = sub.add_parser("heatmap", help="Render the Gaussian heatmap of a dataset's average")
    p.add_argument("--input", required=True)
    p.add_argument("--out", required=True, help=".pgm or .csv")
    p.add_argument("--sigma", type=float, default=DEFAULT_SIGMA)
    p.add_argument("--padded", action="store_true", help="Render on the padded grid")
    p.add_argument("--pad", type=int, default=None)
    p.set_defaults(func=cmd_heatmap)

    p = sub.add_parser("metrics", help="Compare two heatmaps")
    p.add_argument("--a", required=True, help="Reference heatmap (.pgm or .csv)")
    p.add_argument("--b", required=True, help="Estimated heatmap (.pgm or .csv)")
    p.add_argument("--rect", default=None, help="WIDTHxHEIGHT of the valid region")
    p.add_argument("--out", default=None, help="Also write the JSON here")
    p.set_defaults(func=cmd_metrics)

    p = sub.add_parser("shuffle-sim", help="Shuffle-model communication report and utility")
    p.add_argument("--B", default="64,256,1024", help="Comma-separated scaling factors")
    p.add_argument("--eps", type=float, default=5.0)
    p.add_argument("--privacy-delta", type=float, default=1e-5)
    p.add_argument("--delta", type=int, default=16, help="Grid resolution")
    p.add_argument("--n", type=int, default=50)
    p.add_argument("--mode", choices=["theory", "experiment"], default="theory")
    p.add_argument("--headroom", type=int, default=1, help="Modulus q = B n headroom")
    p.add_argument("--sigma", type=float, default=DEFAULT_SIGMA)
    p.add_argument("--input", default=None, help="Dataset for an end-to-end utility run")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_shuffle_sim)

    p = sub.add_parser("coreset-check", help="Empirical k-median coreset error")
    p.add_argument("--input", default=None, help="Dataset of single-point users")
    p.add_argument("--points", type=int, default=50)
    p.add_argument("--num-gaussians", type=int, default=5)
    p.add_argument("--delta", type=int, default=16)
    p.add_argument("--eps", type=float, default=1.0)
    p.add_argument("--w", type=int, default=20)
    p.add_argument("--mode", choices=["theory", "experiment"], default="experiment")
    p.add_argument("--k", default="1,2")
    p.add_argument("--lam", type=float, default=0.0)
    p.add_argument("--candidate-delta", type=int, default=4)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_coreset_check)

    p = sub.add_parser("sweep", help="Run an experiment sweep")
    p.add_argument("--config", default=None, help="YAML or JSON sweep configuration")
    p.add_argument("--kind", choices=SWEEP_KINDS, default=None)
    p.add_argument("--eps", default=None, help="Comma-separated eps values")
    p.add_argument("--n", default=None, help="Comma-separated user counts")
    p.add_argument("--delta", default=None, help="Comma-separated resolutions")
    p.add_argument("--w", type=int, default=None)
    p.add_argument("--gamma", type=float, default=None)
    p.add_argument("--mode", choices=["theory", "experiment"], default=None)
    p.add_argument("--sigma", type=float, default=None)
    p.add_argument("--trials", type=int, default=None)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--algorithms", default=None, help=f"Comma-separated subset of {ALGORITHMS}")
    p.add_argument("--thresholds", default=None, help="Comma-separated top-t percentages")
    p.add_argument("--B", default=None, help="Comma-separated shuffle scaling factors")
    p.add_argument("--privacy-delta", type=float, default=None)
    p.add_argument("--num-gaussians", default=None)
    p.add_argument("--samples-per-user", default=None)
    p.add_argument("--covariance-range", default=None, help="LOW,HIGH eigenvalue range of the mixture covariances")
    p.add_argument("--placement", choices=PLACEMENTS, default=None)
    p.add_argument("--rect", default=None, help="WIDTHxHEIGHT rectangular grid")
    p.add_argument("--input", default=None, help="Dataset CSV to sample users from")
    p.add_argument("--out-dir", default=None)
    p.add_argument("--workers", type=int, default=None)
    p.add_argument("--pgm", action="store_true", help="Also write PGM heatmaps")
    p.add_argument("--no-timing", action="store_true", help="Leave wall_ms empty for byte-identical reruns")
    p.set_defaults(func=cmd_sweep)

    return parser.parse_args(argv)


def main(argv: Sequence[str] | None = None) -> int:
    args = parse_args(argv)
    try:
        return args.func(args)
    except ValueError as e:
        print(f"[{settings.PROJECT_NAME}] Error: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    raise SystemExit(main())
