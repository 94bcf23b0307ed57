import numpy as np
import pytest

from core_grid import CellId, GridPoint, SparseDist, cells_at
from emd_oracle import best_k_sparse_error, emd, emd_norm
from pyramid_transform import PyramidVec, apply_pyramid, pyramid_l1
from reconstruct import _place, fit_objective, l1_fit, reconstruct, restrict, select_support


def chain(point: GridPoint, max_level: int) -> list[CellId]:
    return [CellId(i, point.ix >> (max_level - i), point.iy >> (max_level - i)) for i in range(max_level + 1)]


def test_single_point_selects_its_chain():
    p = GridPoint(5, 2, 8)
    y = apply_pyramid(SparseDist.from_mapping(8, {p: 1.0}))
    sel = select_support(y, 1)
    assert [sel.per_level[i][0] for i in range(4)] == chain(p, 3)
    assert all(len(sel.per_level[i]) == 1 for i in range(4))


def test_wide_selection_keeps_every_cell():
    y = apply_pyramid(np.random.default_rng(0).random((4, 4)))
    sel = select_support(y, 16)
    for i in range(3):
        assert set(sel.per_level[i]) == set(cells_at(i))
        assert sel.dropped[i] == []


def test_two_chains_survive_width_two():
    y = apply_pyramid(SparseDist.from_mapping(4, {(0, 0): 3.0, (3, 3): 1.0}))
    sel = select_support(y, 2)
    for c in chain(GridPoint(0, 0, 4), 2) + chain(GridPoint(3, 3, 4), 2):
        assert c in sel.union


def test_ties_break_by_row_then_column():
    y = apply_pyramid(np.zeros((4, 4)))
    sel = select_support(y, 2)
    assert sel.per_level[1] == [CellId(1, 0, 0), CellId(1, 1, 0)]


def test_start_level_keeps_all_cells_there():
    y = apply_pyramid(SparseDist.from_mapping(8, {(1, 1): 1.0}), start_level=1)
    sel = select_support(y, 1)
    assert set(sel.per_level[1]) == set(cells_at(1))
    assert 0 not in sel.per_level


def test_restrict_zeroes_unselected():
    y = apply_pyramid(np.ones((4, 4)))
    sel = select_support(y, 1)
    restricted = restrict(y, sel)
    assert np.count_nonzero(restricted.y_hat.levels[2]) == 1
    assert restricted.support == sel.union


@pytest.mark.parametrize("k", [1, 3, 5])
def test_zero_noise_exact_recovery(k):
    rng = np.random.default_rng(k)
    cells = rng.choice(256, size=k, replace=False)
    s = SparseDist.from_mapping(16, {(int(c % 16), int(c // 16)): float(rng.integers(1, 4)) for c in cells})
    s_hat = reconstruct(apply_pyramid(s), 20)
    assert s_hat.total_mass() == pytest.approx(s.total_mass(), abs=1e-6)
    assert emd(s_hat.normalized(), s.normalized())[0] <= 1e-6


def test_zero_measurement_gives_zero():
    assert reconstruct(apply_pyramid(np.zeros((8, 8))), 4).entries == {}


def test_negative_root_gives_zero():
    levels = [np.full((1, 1), -1.0), np.zeros((2, 2)), np.zeros((4, 4))]
    s_hat = reconstruct(PyramidVec(levels), 4)
    assert s_hat.total_mass() == pytest.approx(0.0, abs=1e-9)


def test_fit_is_optimal_against_the_truth():
    rng = np.random.default_rng(9)
    s = SparseDist.from_mapping(8, {(1, 2): 1.0, (6, 5): 2.0})
    y = apply_pyramid(s)
    noisy = PyramidVec([lvl + rng.normal(0, 0.05, lvl.shape) for lvl in y.levels])
    sel = select_support(noisy, 4)
    restricted = restrict(noisy, sel)
    s_hat = l1_fit(restricted, sel)
    assert fit_objective(restricted.y_hat, s_hat) <= fit_objective(restricted.y_hat, s) + 1e-6


def test_wider_support_never_worse_without_noise():
    s = SparseDist.from_mapping(8, {(0, 0): 1.0, (7, 7): 1.0, (3, 4): 1.0})
    y = apply_pyramid(s)
    objectives = [fit_objective(y, reconstruct(y, w)) for w in (1, 2, 4, 8)]
    assert all(b <= a + 1e-6 for a, b in zip(objectives, objectives[1:]))


def test_invalid_width():
    with pytest.raises(ValueError):
        select_support(apply_pyramid(np.zeros((2, 2))), 0)


def _dropped_quadrant_case():
    s = SparseDist.from_mapping(8, {(0, 0): 3.0, (7, 7): 1.0})
    y = apply_pyramid(s)
    sel = select_support(y, 1)
    return restrict(y, sel), sel


def test_spread_placement_fills_the_dropped_subtree():
    variables = [(CellId(3, 0, 0), CellId(3, 0, 0), 0.0), (CellId(1, 1, 1), CellId(0, 0, 0), 0.875)]
    s_hat = _place(variables, np.array([3.0, 1.0]), 8, "spread")
    assert s_hat.entries[GridPoint(0, 0, 8)] == pytest.approx(3.0)
    block = {p: m for p, m in s_hat.entries.items() if p != GridPoint(0, 0, 8)}
    assert len(block) == 16
    assert all(4 <= p.ix < 8 and 4 <= p.iy < 8 for p in block)
    assert all(m == pytest.approx(1.0 / 16) for m in block.values())


def test_anchor_placement_uses_subtree_corner():
    variables = [(CellId(3, 0, 0), CellId(3, 0, 0), 0.0), (CellId(1, 1, 1), CellId(0, 0, 0), 0.875)]
    s_hat = _place(variables, np.array([3.0, 1.0]), 8, "anchor")
    assert s_hat.entries == {GridPoint(0, 0, 8): 3.0, GridPoint(4, 4, 8): 1.0}


def test_placement_leaves_fit_objective_unchanged():
    restricted, sel = _dropped_quadrant_case()
    spread = fit_objective(restricted.y_hat, l1_fit(restricted, sel))
    anchor = fit_objective(restricted.y_hat, l1_fit(restricted, sel, placement="anchor"))
    assert spread == pytest.approx(anchor, abs=1e-6)
    assert spread == pytest.approx(0.875, abs=1e-6)


def test_unknown_placement():
    restricted, sel = _dropped_quadrant_case()
    with pytest.raises(ValueError):
        l1_fit(restricted, sel, placement="center")


def test_emd_norm_within_twice_pyramid_l1():
    rng = np.random.default_rng(31)
    for _ in range(20):
        z = np.zeros((8, 8))
        cells = rng.choice(64, size=int(rng.integers(1, 10)), replace=False)
        z.ravel()[cells] = rng.normal(size=cells.size)
        assert emd_norm(z) <= 2 * pyramid_l1(z) + 1e-7


@pytest.mark.parametrize("placement", ["spread", "anchor"])
@pytest.mark.parametrize("seed", range(6))
def test_recovery_error_bounded_by_noise_for_sparse_input(seed, placement):
    # With every true cell selected, |P(s_hat - s)|_1 <= 2 |noise|_1 and
    # emd_norm <= 2 pyramid_l1, so the error stays within 4 |noise|_1.
    rng = np.random.default_rng(100 + seed)
    k = int(rng.integers(1, 4))
    w = 4 * k
    cells = rng.choice(64, size=k, replace=False)
    s = SparseDist.from_mapping(8, {(int(c % 8), int(c // 8)): float(rng.uniform(1.0, 3.0)) for c in cells})
    exact = apply_pyramid(s)
    noise = [rng.uniform(-0.02, 0.02, lvl.shape) * 2.0 ** -i for i, lvl in enumerate(exact.levels)]
    y = PyramidVec([lvl + nu for lvl, nu in zip(exact.levels, noise)])
    s_hat = reconstruct(y, w, placement=placement)
    noise_l1 = float(sum(np.abs(nu).sum() for nu in noise))
    error = emd_norm(s_hat.to_dense() - s.to_dense())
    assert error <= 4.0 * (noise_l1 + best_k_sparse_error(s, k)) + 1e-6
