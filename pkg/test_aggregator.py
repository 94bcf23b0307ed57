import numpy as np
import pytest

from aggregator import (
    AggregationConfig,
    aggregate_central,
    aggregate_dense,
    baseline_laplace,
    coreset,
    dense_level,
    is_degenerate,
    normalize,
    uniform,
    validate_inputs,
)
from core_grid import GridPoint, SparseDist, coarsen, spread_dense, sum_dense
from dp_noise import RngSeed
from emd_oracle import emd, emd_norm


def users_from(rng, n, delta, k=3):
    out = []
    for _ in range(n):
        cells = rng.choice(delta * delta, size=k, replace=False)
        out.append(SparseDist.from_mapping(delta, {(int(c % delta), int(c // delta)): 1.0 / k for c in cells}))
    return out


def test_config_validation():
    with pytest.raises(ValueError):
        AggregationConfig(eps=0.0)
    with pytest.raises(ValueError):
        AggregationConfig(eps=1.0, w=0)
    with pytest.raises(ValueError):
        AggregationConfig(eps=1.0, gamma=1.2)
    with pytest.raises(ValueError):
        AggregationConfig(eps=1.0, mode="fast")
    with pytest.raises(ValueError):
        AggregationConfig(eps=1.0, placement="center")


def test_start_level_by_mode():
    assert AggregationConfig(eps=1.0, w=20, mode="theory").start_level(8) == 0
    assert AggregationConfig(eps=1.0, w=20, mode="experiment").start_level(8) == 2
    assert AggregationConfig(eps=1.0, w=20, mode="experiment").start_level(1) == 1


def test_validate_inputs_rejects_bad_users():
    with pytest.raises(ValueError):
        validate_inputs([])
    with pytest.raises(ValueError):
        validate_inputs([SparseDist.from_mapping(4, {(0, 0): 0.5})])
    with pytest.raises(ValueError):
        validate_inputs([SparseDist.from_mapping(4, {(0, 0): 1.0}), SparseDist.from_mapping(8, {(0, 0): 1.0})])


@pytest.mark.parametrize("mode", ["theory", "experiment"])
def test_near_zero_noise_recovers_single_point(mode):
    p = SparseDist.from_mapping(16, {(9, 4): 1.0})
    result = aggregate_central([p], AggregationConfig(eps=1e9, w=20, mode=mode))
    assert emd(result.a_hat, p)[0] <= 1e-6
    assert result.epsilon_spent == pytest.approx(1e9)
    assert not result.degenerate


def test_noise_free_recovers_user_average():
    rng = np.random.default_rng(2)
    users = users_from(rng, 4, 16, k=1)
    result = aggregate_central(users, AggregationConfig(eps=1.0, noise_free=True))
    truth = SparseDist.from_dense(sum_dense(users, 16) / 4)
    assert emd(result.a_hat, truth)[0] <= 1e-6


def test_central_is_deterministic_per_seed():
    rng = np.random.default_rng(3)
    users = users_from(rng, 10, 16)
    cfg = AggregationConfig(eps=1.0, seed=42)
    a = aggregate_central(users, cfg)
    b = aggregate_central(users, cfg)
    assert a.a_hat == b.a_hat
    np.testing.assert_array_equal(a.y_prime.flatten(), b.y_prime.flatten())


def test_central_output_is_a_distribution():
    rng = np.random.default_rng(4)
    users = users_from(rng, 30, 32)
    result = aggregate_central(users, AggregationConfig(eps=0.5, seed=1))
    assert result.a_hat.is_distribution(1e-9)
    assert result.schedule.spent() == pytest.approx(0.5)


def test_normalize_identity_and_fallback(capsys):
    p = SparseDist.from_mapping(4, {(1, 1): 0.25, (2, 2): 0.75})
    assert normalize(p) == p
    assert not is_degenerate(p)
    zero = SparseDist.zero(4)
    assert is_degenerate(zero)
    assert normalize(zero, n=3) == uniform(4)
    assert "falling back to the uniform distribution" in capsys.readouterr().err


def test_normalization_error_bound_example():
    a = GridPoint(1, 1, 4)
    s = SparseDist.from_mapping(4, {a: 2.0})
    s_hat = SparseDist.from_mapping(4, {a: 1.5})
    zeta = emd_norm(s.to_dense() - s_hat.to_dense())
    assert zeta == pytest.approx(1.0)
    a_hat = normalize(s_hat, 2)
    assert emd(s.normalized(), a_hat)[0] <= 4 * zeta / 2


def test_dense_level():
    assert dense_level(1.0, 64, 8) == 3
    assert dense_level(1.0, 64, 2) == 2
    assert dense_level(0.1, 5, 8) == 0


def test_dense_noise_free_returns_snapped_average():
    rng = np.random.default_rng(5)
    users = users_from(rng, 64, 32, k=2)
    result = aggregate_dense(users, 1.0, noise_free=True)
    assert result.coarse_resolution == 8
    assert result.s_hat.resolution == 8
    assert result.schedule is None
    coarse_average = sum_dense([coarsen(u, 8) for u in users], 8) / 64
    np.testing.assert_allclose(result.s_hat.to_dense(), coarse_average * 64, atol=1e-6)
    # The release lives on the input grid, each coarse cell spread over its 4x4 block.
    assert result.a_hat.resolution == 32
    np.testing.assert_allclose(result.a_hat.to_dense(), spread_dense(coarse_average, 32), atol=1e-6)


def test_dense_output_nonnegative_distribution():
    rng = np.random.default_rng(6)
    users = users_from(rng, 100, 16)
    result = aggregate_dense(users, 1.0, rng=RngSeed(1).generator())
    assert result.a_hat.is_distribution(1e-9)
    assert all(m >= 0 for m in result.a_hat.entries.values())


def test_baseline_threshold_keeps_top_cells():
    users = [SparseDist.from_mapping(4, {(0, 0): 1.0})] * 3 + [SparseDist.from_mapping(4, {(3, 3): 1.0})]
    out = baseline_laplace(users, 1.0, threshold_pct=10, noise_free=True)
    # ceil(0.1 * 16) = 2 cells survive.
    assert set(out.entries) == {GridPoint(0, 0, 4), GridPoint(3, 3, 4)}
    assert out.entries[GridPoint(0, 0, 4)] == pytest.approx(0.75)
    out = baseline_laplace(users, 1.0, threshold_pct=5, noise_free=True)
    assert set(out.entries) == {GridPoint(0, 0, 4)}


def test_baseline_threshold_range():
    users = [SparseDist.from_mapping(4, {(0, 0): 1.0})]
    with pytest.raises(ValueError):
        baseline_laplace(users, 1.0, threshold_pct=0)
    with pytest.raises(ValueError):
        baseline_laplace(users, 1.0, threshold_pct=120)


def test_baseline_noisy_is_distribution():
    rng = np.random.default_rng(7)
    out = baseline_laplace(users_from(rng, 20, 16), 1.0, seed=3)
    assert out.is_distribution(1e-9)


def test_coreset_noise_free_matches_counts():
    points = [GridPoint(1, 1, 8), GridPoint(1, 1, 8), GridPoint(6, 2, 8)]
    s_hat = coreset(points, 1.0, noise_free=True)
    assert s_hat.total_mass() == pytest.approx(3.0, abs=1e-6)
    assert s_hat.entries[GridPoint(1, 1, 8)] == pytest.approx(2.0, abs=1e-6)


def test_dense_release_matches_input_grid_for_heatmaps():
    from heatmap_metrics import heatmap, metrics

    rng = np.random.default_rng(8)
    users = users_from(rng, 64, 32, k=1)
    result = aggregate_dense(users, 1.0, rng=RngSeed(2).generator())
    reference = heatmap(sum_dense(users, 32) / 64, 0.05)
    row = metrics(reference, heatmap(result.a_hat, 0.05))
    assert 0.0 <= row["sim"] <= 1.0


def test_dense_coarsest_level_lifts_to_input_grid():
    users = [SparseDist.from_mapping(16, {(0, 0): 1.0})]
    result = aggregate_dense(users, 1e-6, rng=RngSeed(0).generator())
    assert result.a_hat.resolution == 16
    assert result.a_hat.is_distribution(1e-9)


def test_spread_and_anchor_placement_release_same_mass():
    rng = np.random.default_rng(9)
    users = users_from(rng, 20, 32)
    spread = aggregate_central(users, AggregationConfig(eps=0.5, seed=4))
    anchor = aggregate_central(users, AggregationConfig(eps=0.5, seed=4, placement="anchor"))
    assert spread.s_hat.total_mass() == pytest.approx(anchor.s_hat.total_mass(), abs=1e-6)
    assert len(spread.a_hat.entries) >= len(anchor.a_hat.entries)
