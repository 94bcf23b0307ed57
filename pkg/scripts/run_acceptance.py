#!/usr/bin/env python3
"""Run the acceptance replications on synthetic data and write a JSON summary.

Each check reports `passed` plus the numbers behind it. Checks marked informational
(truncated-heatmap inequalities) are reported and never counted as failures.
"""

from __future__ import annotations

import argparse
import json
import math
import sys
import time
from pathlib import Path

REPO_ROOT = Path(__file__).resolve().parents[1]
if str(REPO_ROOT) not in sys.path:
    sys.path.insert(0, str(REPO_ROOT))

import numpy as np
from scipy import stats

import settings
from aggregator import AggregationConfig, aggregate_central, aggregate_dense, coreset, normalize
from clustering import coreset_check
from cli import ExperimentConfig, run_trial, sweep_tasks
from core_grid import GridPoint, SparseDist, sum_dense
from datagen import CHECKIN_COVARIANCE_RANGE
from dp_noise import RngSeed, budget_schedule, discrete_laplace_pmf, discrete_laplace_share
from emd_oracle import emd, emd_dense, emd_grid, emd_norm
from heatmap_metrics import heatmap, heatmap_padded, kl_divergence, similarity, total_variation
from pyramid_transform import pyramid_l1, unscaled_levels
from shuffle_sim import ShuffleParams, _encode, communication_report, modular_sums, shuffle_aggregate


def parse_args() -> argparse.Namespace:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument(
        "--out",
        default=str(REPO_ROOT / "runs" / "acceptance.json"),
        help="Path of the JSON summary",
    )
    parser.add_argument("--quick", action="store_true", help="Scaled-down trial counts")
    parser.add_argument("--only", default="", help="Comma-separated check names to run")
    parser.add_argument("--seed", type=int, default=0)
    return parser.parse_args()


# Width per unit of sparsity in the error-scaling check.
WIDTH_PER_SPARSITY = 4


def random_sparse(rng: np.random.Generator, delta: int, k: int, mass: float = 1.0) -> SparseDist:
    cells = rng.choice(delta * delta, size=k, replace=False)
    weights = rng.random(k) + 0.1
    weights = weights / weights.sum() * mass
    return SparseDist(delta, {GridPoint(int(c % delta), int(c // delta), delta): float(m) for c, m in zip(cells, weights)})


def signed_random(rng: np.random.Generator, delta: int, support: int, balanced: bool = False) -> dict:
    cells = rng.choice(delta * delta, size=support, replace=False)
    values = rng.normal(size=support)
    if balanced:
        values = values - values.mean()
    return {GridPoint(int(c % delta), int(c // delta), delta): float(v) for c, v in zip(cells, values)}


def check_zero_noise(rng, quick: bool) -> dict:
    worst = 0.0
    for _ in range(10 if quick else 50):
        s = random_sparse(rng, 64, int(rng.integers(1, 6)))
        result = aggregate_central([s], AggregationConfig(eps=1.0, w=20, noise_free=True))
        cost, _ = emd(result.s_hat.scale(1.0 / result.s_hat.total_mass()), s)
        worst = max(worst, cost)
    return {"passed": worst <= 1e-6, "max_emd": worst}


def check_budget(rng, quick: bool) -> dict:
    worst_sum = 0.0
    for _ in range(200 if quick else 1000):
        eps = float(rng.uniform(0.01, 20.0))
        max_level = int(rng.integers(0, 11))
        sched = budget_schedule(eps, max_level, int(rng.integers(1, 200)), float(rng.uniform(0.51, 0.99)))
        worst_sum = max(worst_sum, abs(sched.spent() - eps))
    worst_change = 0.0
    for _ in range(20 if quick else 100):
        users = [random_sparse(rng, 16, int(rng.integers(1, 6))) for _ in range(int(rng.integers(2, 8)))]
        full = unscaled_levels(sum_dense(users, 16))
        fewer = unscaled_levels(sum_dense(users[1:], 16))
        worst_change = max(worst_change, max(float(np.abs(a - b).sum()) for a, b in zip(full, fewer)))
    return {
        "passed": worst_sum <= 1e-12 and worst_change <= 1 + 1e-9,
        "max_sum_error": worst_sum,
        "max_level_change": worst_change,
    }


def _mean_norm_error(rng, k: int, eps: float, trials: int, w: int, mode: str, delta: int = 16) -> float:
    errors = []
    for _ in range(trials):
        s = random_sparse(rng, delta, k)
        cfg = AggregationConfig(eps=eps, w=w, mode=mode, seed=int(rng.integers(2 ** 31)))
        result = aggregate_central([s], cfg)
        diff = s.to_dense() - result.s_hat.to_dense()
        errors.append(emd_norm(diff))
    return float(np.mean(errors))


def check_error_scaling(rng, quick: bool) -> dict:
    """
    The recovery bound holds with w proportional to k; at one fixed w the noise term
    does not depend on k, so the fixed-width constants are reported only.
    """
    trials = 20 if quick else 100
    scaled = {
        k: _mean_norm_error(rng, k, 1.0, trials, WIDTH_PER_SPARSITY * k, "theory") / math.sqrt(k)
        for k in (1, 2, 4)
    }
    fixed = {k: _mean_norm_error(rng, k, 1.0, trials, 20, "experiment") / math.sqrt(k) for k in (1, 2, 4)}
    center = float(np.mean(list(scaled.values())))
    stable = all(abs(c - center) <= 0.25 * center for c in scaled.values())
    w = WIDTH_PER_SPARSITY * 2
    ratio = _mean_norm_error(rng, 2, 2.0, trials, w, "theory") / _mean_norm_error(rng, 2, 1.0, trials, w, "theory")
    return {
        "passed": stable and 0.4 <= ratio <= 0.6,
        "fitted_C": {str(k): c for k, c in scaled.items()},
        "fitted_C_fixed_w20_informational": {str(k): c for k, c in fixed.items()},
        "eps2_over_eps1": ratio,
    }


def _dense_signed(z: dict, delta: int) -> np.ndarray:
    dense = np.zeros((delta, delta))
    for p, v in z.items():
        dense[p.iy, p.ix] = v
    return dense


def check_expansion(rng, quick: bool) -> dict:
    """
    Zero-sum z obeys emd_norm <= pyramid_l1. Unbalanced z only obeys it with a factor
    2 (a unit point at delta 8 costs 2 against 1.875), which is checked separately.
    """
    violations, unbalanced_violations = 0, 0
    for _ in range(50 if quick else 200):
        z = signed_random(rng, 8, int(rng.integers(2, 12)), balanced=True)
        if emd_norm(z) > pyramid_l1(_dense_signed(z, 8)) + 1e-7:
            violations += 1
        z = signed_random(rng, 8, int(rng.integers(1, 12)))
        if emd_norm(z) > 2 * pyramid_l1(_dense_signed(z, 8)) + 1e-7:
            unbalanced_violations += 1
    return {
        "passed": violations == 0 and unbalanced_violations == 0,
        "violations": violations,
        "unbalanced_factor2_violations": unbalanced_violations,
    }


def check_normalization(rng, quick: bool) -> dict:
    violations, tested = 0, 0
    for _ in range(50 if quick else 200):
        n = int(rng.integers(2, 20))
        users = [random_sparse(rng, 8, int(rng.integers(1, 4))) for _ in range(n)]
        s = sum_dense(users, 8)
        s_hat = np.clip(s + rng.normal(0.0, 0.3, size=s.shape) * (rng.random(s.shape) < 0.2), 0.0, None)
        if s_hat.sum() <= 0:
            continue
        zeta = emd_norm(s - s_hat)
        if zeta > n / 2:
            continue
        tested += 1
        a_hat = normalize(SparseDist.from_dense(s_hat), n)
        cost, _ = emd(SparseDist.from_dense(s / n), a_hat)
        if cost > 4 * zeta / n + 1e-7:
            violations += 1
    return {"passed": violations == 0 and tested > 0, "violations": violations, "tested": tested}


def _heatmap_inequalities(rng, pairs: int, padded: bool) -> dict:
    counts = {"emd": 0, "kl": 0, "tv": 0}
    for _ in range(pairs):
        for sigma in (0.05, 0.1):
            p = random_sparse(rng, 8, int(rng.integers(1, 4)))
            q = random_sparse(rng, 8, int(rng.integers(1, 4)))
            base, _ = emd(p, q)
            render = heatmap_padded if padded else heatmap
            hp, hq = render(p, sigma), render(q, sigma)
            if emd_dense(hp.values / hp.values.sum(), hq.values / hq.values.sum(), unit=8) > base + 1e-6:
                counts["emd"] += 1
            if kl_divergence(hp, hq) > base / (2 * sigma ** 2) + 1e-4:
                counts["kl"] += 1
            if total_variation(hp, hq) > math.sqrt(base) / (2 * sigma) + 1e-4:
                counts["tv"] += 1
    return counts


def check_heatmap_bounds(rng, quick: bool) -> dict:
    pairs = 20 if quick else 100
    padded = _heatmap_inequalities(rng, pairs, padded=True)
    truncated = _heatmap_inequalities(rng, pairs, padded=False)
    return {
        "passed": sum(padded.values()) == 0,
        "padded_violations": padded,
        "truncated_violations_informational": truncated,
    }


def _sweep_rows(cfg: ExperimentConfig) -> list[dict]:
    rows = []
    for task in sweep_tasks(cfg):
        rows.extend(run_trial(task, cfg, None))
    return rows


def _by(rows, **match) -> list[dict]:
    return [r for r in rows if all(r[k] == v for k, v in match.items()) and not r["error"]]


def check_baseline_comparison(rng, quick: bool, seed: int) -> dict:
    trials = 3 if quick else 10
    cfg = ExperimentConfig(
        kind="eps", eps_list=[1.0], n_list=[200], delta_list=[64 if quick else 256], trials=trials,
        seed=seed, algorithms=["ours", "baseline", "baseline-top"], timing=False, out_dir=str(REPO_ROOT / "runs"),
        covariance_range=list(CHECKIN_COVARIANCE_RANGE),
    )
    rows = _sweep_rows(cfg)
    ours = {r["trial"]: r for r in _by(rows, algorithm="ours")}
    base = {r["trial"]: r for r in _by(rows, algorithm="baseline")}
    wins = sum(
        1 for t in ours
        if t in base and ours[t]["emd"] < base[t]["emd"] and ours[t]["sim"] > base[t]["sim"]
    )
    top_means = {
        name: float(np.mean([r["emd"] for r in _by(rows, algorithm=name)]))
        for name in {r["algorithm"] for r in rows if r["algorithm"].startswith("baseline-top")}
    }
    ours_mean = float(np.mean([r["emd"] for r in ours.values()]))
    return {
        "passed": wins >= math.ceil(0.8 * trials) and all(ours_mean < v for v in top_means.values()),
        "wins": wins,
        "trials": trials,
        "ours_mean_emd": ours_mean,
        "threshold_mean_emd": top_means,
        "covariance_range": list(CHECKIN_COVARIANCE_RANGE),
    }


def check_resolution(rng, quick: bool, seed: int) -> dict:
    cfg = ExperimentConfig(
        kind="resolution", eps_list=[10.0], n_list=[200], delta_list=[64, 128, 256],
        trials=4 if quick else 10, seed=seed, algorithms=["ours", "baseline"], timing=False,
    )
    rows = _sweep_rows(cfg)
    ours = [float(np.mean([r["emd"] for r in _by(rows, algorithm="ours", delta_grid=d)])) for d in cfg.delta_list]
    base = [float(np.mean([r["emd"] for r in _by(rows, algorithm="baseline", delta_grid=d)])) for d in cfg.delta_list]
    spread = (max(ours) - min(ours)) / max(np.mean(ours), 1e-12)
    return {
        "passed": spread < 0.10 and all(b2 > b1 for b1, b2 in zip(base, base[1:])),
        "ours_emd": ours,
        "baseline_emd": base,
        "ours_relative_spread": spread,
    }


def check_sparsity(rng, quick: bool, seed: int) -> dict:
    trials = 3 if quick else 10
    delta = 64 if quick else 256
    fixed = ExperimentConfig(
        kind="sparsity", eps_list=[1.0], n_list=[200], delta_list=[delta], trials=trials, seed=seed,
        algorithms=["ours"], num_gaussians=[20], samples_per_user=[5, 10, 20, 40], timing=False,
    )
    growing = ExperimentConfig(
        kind="sparsity", eps_list=[1.0], n_list=[200], delta_list=[delta], trials=trials, seed=seed,
        algorithms=["ours"], num_gaussians=[5, 10, 20, 80], samples_per_user=[20], timing=False,
    )

    def slope(cfg):
        rows = _by(_sweep_rows(cfg), algorithm="ours")
        x = np.array([r["sparsity"] for r in rows], dtype=float)
        y = np.array([r["emd"] for r in rows], dtype=float)
        return float(np.polyfit(x, y, 1)[0])

    fixed_slope, growing_slope = slope(fixed), slope(growing)
    return {"passed": fixed_slope < growing_slope, "fixed_slope": fixed_slope, "growing_slope": growing_slope}


def check_shuffle(rng, quick: bool, seed: int) -> dict:
    params = ShuffleParams.create(5.0, 1e-5, 16, 50, 256)
    rows = communication_report([64, 256, 1024], 5.0, 1e-5, 16, 50)
    accounting = all(
        r["bits_per_user"] == r["r"] * r["m"] * math.ceil(math.log2(r["m"] * r["q"])) for r in rows
    ) and params.r == 15 and params.m == 341

    users = [random_sparse(rng, 16, int(rng.integers(1, 4))) for _ in range(8)]
    small = ShuffleParams.create(5.0, 1e-5, 16, 8, 64, headroom=4)
    expected = np.zeros(small.m, dtype=np.int64)
    batches = []
    for u in users:
        noisy, batch = _encode(u, small, rng)
        expected += noisy
        batches.append(batch)
    share_sums_exact = bool(np.array_equal(modular_sums(batches, small), expected))

    draws = 5_000 if quick else 20_000
    totals = discrete_laplace_share(50, 1.0, rng, size=(50, draws)).sum(axis=0)
    support = np.arange(-6, 7)
    observed = np.array([np.sum(totals == k) for k in support] + [np.sum(np.abs(totals) > 6)])
    pmf = discrete_laplace_pmf(support, 1.0)
    expected_counts = np.append(pmf, 1.0 - pmf.sum()) * draws
    p_value = float(stats.chisquare(observed, expected_counts).pvalue)

    n = 50
    central_sims, shuffle_sims = [], []
    for trial in range(20 if quick else 50):
        data = [random_sparse(rng, 16, int(rng.integers(1, 4))) for _ in range(n)]
        truth = heatmap(sum_dense(data, 16) / n, 0.05)
        trial_seed = RngSeed(seed).child(trial)
        central = aggregate_central(data, AggregationConfig(eps=5.0, w=20, mode="theory"), rng=trial_seed.generator())
        e2e = ShuffleParams.create(5.0, 1e-5, 16, n, 256, headroom=4)
        shuffled, _ = shuffle_aggregate(data, e2e, trial_seed.generator())
        sim_c = similarity(truth, heatmap(central.a_hat, 0.05))
        sim_s = similarity(truth, heatmap(shuffled.a_hat, 0.05))
        central_sims.append(sim_c)
        shuffle_sims.append(sim_s)
    mean_c, mean_s = float(np.mean(central_sims)), float(np.mean(shuffle_sims))
    rel_delta = abs(mean_s - mean_c) / max(mean_c, 1e-12)
    return {
        "passed": accounting and share_sums_exact and p_value > 0.01 and rel_delta < 0.02,
        "accounting_exact": accounting,
        "share_sums_exact": share_sums_exact,
        "chi_square_p": p_value,
        "central_mean_sim": mean_c,
        "shuffle_mean_sim": mean_s,
        "relative_similarity_delta": rel_delta,
        "communication": rows,
    }


def check_dense(rng, quick: bool, seed: int) -> dict:
    trials = 5 if quick else 20
    scaled = {}
    for n in (64, 256, 1024):
        errors = []
        for t in range(trials):
            users = [random_sparse(rng, 32, 1) for _ in range(n)]
            truth = sum_dense(users, 32) / n
            result = aggregate_dense(users, 1.0, rng=RngSeed(seed).child(n * 1000 + t).generator())
            errors.append(emd_grid(result.a_hat.to_dense(), truth))
        scaled[n] = float(np.median(errors)) * math.sqrt(n)
    values = list(scaled.values())
    return {"passed": max(values) <= 1.5 * min(values), "median_error_times_sqrt_n": {str(k): v for k, v in scaled.items()}}


def check_coreset(rng, quick: bool, seed: int) -> dict:
    repeats = 5 if quick else 20
    delta = 16
    points = [GridPoint(int(x), int(y), delta) for x, y in rng.integers(0, delta, size=(50, 2))]
    fitted = {}
    kappas_single, kappas_double = [], []
    for k in (1, 2):
        values = []
        for r in range(repeats):
            s_hat = coreset(points, 1.0, seed=seed + r)
            report = coreset_check(points, s_hat, k, 0.0, 1.0, candidate_delta=4)
            values.append(report.fitted_C)
            if k == 1:
                kappas_single.append(report.empirical_kappa)
                doubled = points + points
                s_hat2 = coreset(doubled, 1.0, seed=seed + r)
                kappas_double.append(coreset_check(doubled, s_hat2, k, 0.0, 1.0, candidate_delta=4).empirical_kappa)
        fitted[k] = float(np.mean(values))
    center = float(np.mean(list(fitted.values())))
    stable = all(abs(c - center) <= 0.3 * center for c in fitted.values())
    single, double = float(np.mean(kappas_single)), float(np.mean(kappas_double))
    independent = abs(double - single) <= 0.1 * max(single, 1e-12)
    return {
        "passed": stable and independent,
        "fitted_C": {str(k): v for k, v in fitted.items()},
        "kappa_n": single,
        "kappa_2n": double,
    }


CHECKS = {
    "zero_noise": check_zero_noise,
    "budget": check_budget,
    "error_scaling": check_error_scaling,
    "expansion": check_expansion,
    "normalization": check_normalization,
    "heatmap_bounds": check_heatmap_bounds,
    "baseline_comparison": check_baseline_comparison,
    "resolution": check_resolution,
    "sparsity": check_sparsity,
    "shuffle": check_shuffle,
    "dense": check_dense,
    "coreset": check_coreset,
}
SEEDED = {"baseline_comparison", "resolution", "sparsity", "shuffle", "dense", "coreset"}


def main() -> int:
    args = parse_args()
    selected = [c.strip() for c in args.only.split(",") if c.strip()] or list(CHECKS)
    unknown = [c for c in selected if c not in CHECKS]
    if unknown:
        raise ValueError(f"Unknown checks {unknown}; choose from {sorted(CHECKS)}")

    results = {}
    for i, name in enumerate(selected):
        rng = RngSeed(args.seed).child(i).generator()
        started = time.perf_counter()
        try:
            if name in SEEDED:
                outcome = CHECKS[name](rng, args.quick, args.seed)
            else:
                outcome = CHECKS[name](rng, args.quick)
        except Exception as e:
            outcome = {"passed": False, "error": f"{type(e).__name__}: {e}"}
        outcome["seconds"] = round(time.perf_counter() - started, 2)
        results[name] = outcome
        status = "PASS" if outcome["passed"] else "FAIL"
        settings.log_info(f"{name}: {status} ({outcome['seconds']}s)")

    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    summary = {"quick": args.quick, "seed": args.seed, "checks": results}
    out.write_text(json.dumps(summary, indent=2, default=float, ensure_ascii=True), encoding="utf-8")
    failed = [n for n, r in results.items() if not r["passed"]]
    settings.log_info(f"{len(results) - len(failed)} of {len(results)} checks passed; summary at {out}")
    return 1 if failed else 0


if __name__ == "__main__":
    raise SystemExit(main())
