import math

import numpy as np
import pytest

from core_grid import SparseDist
import settings
from emd_oracle import emd, emd_dense, emd_grid
from heatmap_metrics import (
    HeatmapGrid,
    default_pad,
    heatmap,
    heatmap_emd,
    heatmap_padded,
    kl_divergence,
    metrics,
    pearson,
    similarity,
    total_variation,
)


def random_dist(rng, delta, k):
    cells = rng.choice(delta * delta, size=k, replace=False)
    weights = rng.random(k) + 0.1
    weights /= weights.sum()
    return SparseDist.from_mapping(delta, {(int(c % delta), int(c // delta)): w for c, w in zip(cells, weights)})


def test_truncated_heatmap_preserves_mass():
    p = SparseDist.from_mapping(8, {(0, 0): 0.5, (7, 3): 0.5})
    h = heatmap(p, 0.1)
    assert h.values.sum() == pytest.approx(1.0)
    assert h.values[0, 0] > h.values[7, 7]
    assert h.shape == (8, 8)


def test_heatmap_is_symmetric_around_source():
    h = heatmap(SparseDist.from_mapping(16, {(8, 8): 1.0}), 0.05).values
    assert h[8, 7] == pytest.approx(h[8, 9])
    assert h[7, 8] == pytest.approx(h[9, 8])


def test_heatmap_rejects_bad_sigma():
    with pytest.raises(ValueError):
        heatmap(np.eye(4), 0.0)


def test_padded_heatmap_shape_and_mass():
    p = SparseDist.from_mapping(8, {(4, 4): 1.0})
    h = heatmap_padded(p, 0.1)
    pad = default_pad(0.1, 8)
    assert pad == 5
    assert h.shape == (8 + 2 * pad, 8 + 2 * pad)
    assert h.resolution == 8
    assert h.values.sum() == pytest.approx(1.0, abs=1e-6)
    assert h.interior().shape == (8, 8)


def test_identical_heatmaps():
    h = heatmap(SparseDist.from_mapping(8, {(2, 5): 1.0}), 0.1)
    result = metrics(h, h)
    assert result["sim"] == pytest.approx(1.0)
    assert result["pearson"] == 1.0
    assert result["kl"] == pytest.approx(0.0, abs=1e-12)
    assert result["emd"] == pytest.approx(0.0, abs=1e-6)
    assert result["emd_is_surrogate"] is False


def test_similarity_and_total_variation_agree():
    rng = np.random.default_rng(1)
    a, b = rng.random((8, 8)), rng.random((8, 8))
    assert similarity(a, b) == pytest.approx(1.0 - total_variation(a, b))


def test_pearson_constant_map():
    assert pearson(np.ones((4, 4)), np.eye(4)) == 0.0


def test_metrics_shape_mismatch():
    with pytest.raises(ValueError):
        metrics(np.ones((4, 4)), np.ones((8, 8)))


def test_mask_excludes_cells():
    a = np.zeros((4, 4))
    b = np.zeros((4, 4))
    a[0, 0] = b[0, 0] = 1.0
    b[3, 3] = 5.0
    mask = np.zeros((4, 4), dtype=bool)
    mask[:2, :2] = True
    assert similarity(a, b, mask) == pytest.approx(1.0)
    assert kl_divergence(a, b, mask) == pytest.approx(0.0, abs=1e-9)


def test_large_heatmap_uses_grid_flow():
    rng = np.random.default_rng(2)
    p, q = random_dist(rng, 64, 3), random_dist(rng, 64, 3)
    a, b = heatmap(p, 0.02), heatmap(q, 0.02)
    value, surrogate = heatmap_emd(a, b)
    assert surrogate is False
    assert value == pytest.approx(emd_grid(a.values, b.values, unit=64))


def test_oversized_heatmap_uses_surrogate(monkeypatch):
    monkeypatch.setattr(settings, "GRID_FLOW_MAX_CELLS", 1024)
    rng = np.random.default_rng(2)
    a = heatmap(random_dist(rng, 64, 3), 0.02)
    b = heatmap(random_dist(rng, 64, 3), 0.02)
    value, surrogate = heatmap_emd(a, b)
    assert surrogate is True
    assert value > 0


@pytest.mark.parametrize("sigma", [0.05, 0.1])
def test_padded_heatmap_inequalities(sigma):
    rng = np.random.default_rng(int(sigma * 100))
    for _ in range(5):
        p, q = random_dist(rng, 8, 2), random_dist(rng, 8, 3)
        base = emd(p, q)[0]
        hp, hq = heatmap_padded(p, sigma), heatmap_padded(q, sigma)
        a, b = hp.values / hp.values.sum(), hq.values / hq.values.sum()
        assert emd_dense(a, b, unit=8) <= base + 1e-5
        assert kl_divergence(hp, hq) <= base / (2 * sigma ** 2) + 1e-4
        assert total_variation(hp, hq) <= math.sqrt(base) / (2 * sigma) + 1e-4


def test_heatmap_grid_interior():
    grid = HeatmapGrid(np.arange(36, dtype=float).reshape(6, 6), 0.1, pad=1)
    assert grid.resolution == 4
    np.testing.assert_array_equal(grid.interior(), np.arange(36).reshape(6, 6)[1:-1, 1:-1])


def test_similarity_falls_along_mixing_path():
    rng = np.random.default_rng(5)
    p, q = random_dist(rng, 16, 3), random_dist(rng, 16, 4)
    hp = heatmap(p, 0.05)
    sims = []
    for t in np.linspace(0.0, 1.0, 6):
        mixed = p.to_dense() * (1 - t) + q.to_dense() * t
        sims.append(similarity(hp, heatmap(mixed, 0.05)))
    assert sims[0] == pytest.approx(1.0)
    assert all(b <= a + 1e-12 for a, b in zip(sims, sims[1:]))


def test_narrow_kernel_returns_the_distribution():
    p = random_dist(np.random.default_rng(6), 16, 5)
    np.testing.assert_allclose(heatmap(p, 1e-4).values, p.to_dense(), atol=1e-12)


def test_padded_interior_matches_truncated_away_from_edges():
    p = SparseDist.from_mapping(32, {(16, 16): 0.6, (14, 18): 0.4})
    truncated = heatmap(p, 0.05)
    padded = heatmap_padded(p, 0.05)
    np.testing.assert_allclose(padded.interior(), truncated.values, atol=1e-9)
