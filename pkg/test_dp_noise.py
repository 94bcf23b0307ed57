import math

import numpy as np
import pytest

from dp_noise import (
    EXPERIMENT_GAMMA,
    THEORY_GAMMA,
    RngSeed,
    budget_schedule,
    discrete_laplace_pmf,
    discrete_laplace_share,
    laplace,
    polya,
    q_level_for,
)


def test_budget_schedule_example():
    sched = budget_schedule(1.0, 4, 20, THEORY_GAMMA)
    assert sched.q_level == 2
    np.testing.assert_allclose(
        sched.epsilons, [0.164948, 0.206186, 0.257732, 0.206186, 0.164948], atol=1e-6
    )


@pytest.mark.parametrize("eps", [0.1, 1.0, 7.5])
@pytest.mark.parametrize("gamma", [THEORY_GAMMA, EXPERIMENT_GAMMA])
def test_budget_sums_to_eps(eps, gamma):
    for start in range(0, 4):
        sched = budget_schedule(eps, 8, 20, gamma, start_level=start)
        assert sched.spent() == pytest.approx(eps, abs=1e-12)
        assert len(sched.epsilons) == 9 - start


def test_schedule_peaks_at_q_level():
    sched = budget_schedule(2.0, 6, 64, EXPERIMENT_GAMMA)
    assert sched.q_level == 3
    assert max(range(7), key=sched.epsilon) == 3


def test_unmeasured_level_rejected():
    sched = budget_schedule(1.0, 4, 20, THEORY_GAMMA, start_level=2)
    with pytest.raises(ValueError):
        sched.epsilon(1)
    assert sched.laplace_scale(2) == pytest.approx(1.0 / sched.epsilon(2))


def test_q_level_for():
    assert [q_level_for(w) for w in (1, 3, 4, 15, 16, 20, 64)] == [0, 0, 1, 1, 2, 2, 3]
    with pytest.raises(ValueError):
        q_level_for(0)


@pytest.mark.parametrize("gamma", [0.5, 1.0, 0.3])
def test_gamma_range(gamma):
    with pytest.raises(ValueError):
        budget_schedule(1.0, 3, 20, gamma)


def test_rng_seed_streams_reproducible_and_distinct():
    a = RngSeed(7).child(3).generator().random(4)
    b = RngSeed(7).child(3).generator().random(4)
    c = RngSeed(7).child(4).generator().random(4)
    np.testing.assert_array_equal(a, b)
    assert not np.allclose(a, c)


def test_laplace_scale():
    rng = RngSeed(1).generator()
    draws = laplace(2.0, rng, size=200_000)
    assert np.mean(np.abs(draws)) == pytest.approx(2.0, rel=0.02)
    with pytest.raises(ValueError):
        laplace(0.0, rng)


def test_polya_mean():
    rng = RngSeed(2).generator()
    draws = polya(0.5, 0.4, rng, size=200_000)
    assert draws.mean() == pytest.approx(0.5 * 0.4 / 0.6, rel=0.03)


def test_discrete_laplace_pmf_sums_to_one():
    k = np.arange(-200, 201)
    assert discrete_laplace_pmf(k, 0.5).sum() == pytest.approx(1.0)


@pytest.mark.slow
def test_shares_sum_to_discrete_laplace():
    rng = RngSeed(5).generator()
    n, eps_i, draws = 10, 1.0, 100_000
    total = discrete_laplace_share(n, eps_i, rng, size=(n, draws)).sum(axis=0)
    alpha = math.exp(-eps_i)
    assert np.mean(total == 0) == pytest.approx((1 - alpha) / (1 + alpha), abs=0.01)
    assert total.var() == pytest.approx(2 * alpha / (1 - alpha) ** 2, rel=0.05)


def test_laplace_variance_is_twice_scale_squared():
    draws = laplace(2.0, RngSeed(3).generator(), size=1_000_000)
    assert draws.var() == pytest.approx(8.0, abs=0.1)


@pytest.mark.slow
def test_share_sums_pass_chi_square():
    from scipy import stats

    rng = RngSeed(9).generator()
    n, eps_i, draws = 20, 0.5, 40_000
    totals = discrete_laplace_share(n, eps_i, rng, size=(n, draws)).sum(axis=0)
    support = np.arange(-8, 9)
    observed = np.array([np.sum(totals == k) for k in support] + [np.sum(np.abs(totals) > 8)])
    pmf = discrete_laplace_pmf(support, eps_i)
    expected = np.append(pmf, 1.0 - pmf.sum()) * draws
    assert stats.chisquare(observed, expected).pvalue > 0.001
