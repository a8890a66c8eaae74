import numpy as np
import pytest
from hypothesis import given, settings as hsettings, strategies as st

from distcomp.core.validation import InvalidInput, NumericalFailure
from distcomp.games.gridmeasure import Grid, GridDistribution, PrizeVector
from distcomp.games.prizes import (
    PrizeSpec,
    _check_standard_error,
    expected_aggregate,
    interim_batch,
    interim_prize,
    interim_prize_with_error,
    planner_batch,
    planner_gradient,
    race_win_share,
    rank_order_local,
)
from distcomp.models.schemas import SolverConfig


def race_value(t):
    return np.exp(-np.asarray(t, dtype=float))


def test_winner_take_all_pair_is_midpoint_cdf(grid_small, rng):
    F = GridDistribution.from_weights(grid_small, rng.dirichlet(np.ones(grid_small.size)))
    a = interim_prize(PrizeSpec.rank_order([1.0, 0.0]), F)
    assert np.allclose(a, F.cdf_left + 0.5 * F.weights, atol=1e-14)


def test_full_tie_splits_prizes_evenly():
    spec = PrizeSpec.rank_order([0.6, 0.4, 0.0])
    assert float(rank_order_local(spec, 0.0, 1.0)) == pytest.approx(1.0 / 3.0)
    assert float(rank_order_local(spec, 1.0, 0.0)) == pytest.approx(0.6)
    assert float(rank_order_local(spec, 0.0, 0.0)) == pytest.approx(0.0)


@hsettings(max_examples=30, deadline=None)
@given(st.integers(min_value=2, max_value=5), st.integers(min_value=0, max_value=10_000))
def test_symmetric_profile_pays_average_prize(n, seed):
    rng = np.random.default_rng(seed)
    grid = Grid.uniform(21)
    F = GridDistribution.from_weights(grid, rng.dirichlet(np.full(grid.size, 0.5)))
    spec = PrizeSpec.rank_order(PrizeVector.random(n, rng))
    assert float(np.dot(interim_prize(spec, F), F.weights)) == pytest.approx(1.0 / n, abs=1e-12)


def test_interim_batch_matches_single(grid_small, rng):
    spec = PrizeSpec.rank_order([0.7, 0.3, 0.0])
    batch = rng.dirichlet(np.ones(grid_small.size), size=4)
    out = interim_batch(spec, grid_small, batch)
    single = interim_prize(spec, GridDistribution(grid_small, batch[2]))
    assert np.allclose(out[2], single)


def test_race_win_share_limits():
    assert float(race_win_share(3, 0.4, 0.0)) == pytest.approx(0.16)
    assert float(race_win_share(4, 0.0, 1.0)) == pytest.approx(0.25)


def test_min_race_index_value_vanishes_at_infinity(grid_small):
    spec = PrizeSpec.min_race(2, race_value)
    vhat = spec.index_value(grid_small)
    assert vhat[0] == 0.0
    assert vhat[-1] == pytest.approx(1.0)
    assert spec.prize_bound(grid_small) == pytest.approx(1.0)


@pytest.mark.parametrize("spec", [
    PrizeSpec.min_race(3, race_value),
    PrizeSpec.max_quality(3, lambda q: 2.0 * np.asarray(q)),
])
def test_planner_gradient_averages_to_aggregate(spec, grid_small, rng):
    F = GridDistribution.from_weights(grid_small, rng.dirichlet(np.ones(grid_small.size)))
    A = planner_gradient(spec, F)
    assert float(np.dot(A, F.weights)) == pytest.approx(expected_aggregate(spec, F), abs=1e-12)


def test_rank_order_planner_gradient_is_constant(grid_small):
    spec = PrizeSpec.rank_order([1.0, 0.0, 0.0])
    w = np.full((2, grid_small.size), 1.0 / grid_small.size)
    assert np.all(planner_batch(spec, grid_small, w) == 1.0)
    assert expected_aggregate(spec, GridDistribution.uniform(grid_small)) == 1.0


def test_monte_carlo_rank_order_tracks_exact(grid_small):
    F = GridDistribution.uniform(grid_small)
    cfg = SolverConfig(kkt_tol=0.05, mc_samples=20000, seed=7)
    exact = interim_prize(PrizeSpec.rank_order([1.0, 0.0]), F)
    estimate, errors = interim_prize_with_error(PrizeSpec.rank_order_mc([1.0, 0.0]), F, cfg)
    assert np.all(np.abs(estimate - exact) <= 5.0 * errors + 1e-12)


def test_monte_carlo_is_seeded(grid_small):
    F = GridDistribution.uniform(grid_small)
    spec = PrizeSpec.rank_order_mc([1.0, 0.0])
    cfg = SolverConfig(kkt_tol=0.05, seed=3)
    assert np.array_equal(interim_prize(spec, F, cfg), interim_prize(spec, F, cfg))


def test_monte_carlo_error_budget_is_enforced(grid_small):
    F = GridDistribution.uniform(grid_small)
    cfg = SolverConfig(kkt_tol=1e-3, mc_samples=200, seed=0)
    with pytest.raises(NumericalFailure):
        interim_prize(PrizeSpec.rank_order_mc([1.0, 0.0]), F, cfg)


def test_monte_carlo_budget_is_a_tenth_of_the_tolerance():
    cfg = SolverConfig(kkt_tol=1e-2)
    _check_standard_error(np.array([5e-4, 9e-4]), cfg, "interim prize")
    # Between kkt_tol/10 and kkt_tol/4 the estimate is already too noisy.
    with pytest.raises(NumericalFailure, match="kkt_tol/10"):
        _check_standard_error(np.array([5e-4, 2e-3]), cfg, "interim prize")


def test_custom_oracle_is_used(grid_small):
    spec = PrizeSpec.custom(2, interim=lambda x, w: np.broadcast_to(x, np.shape(w)), pi_bar=1.0)
    F = GridDistribution.uniform(grid_small)
    assert np.allclose(interim_prize(spec, F), grid_small.points)
    assert spec.prize_bound() == 1.0


def test_constructor_preconditions():
    with pytest.raises(InvalidInput):
        PrizeSpec.custom(2)
    with pytest.raises(InvalidInput):
        PrizeSpec.min_race(1, race_value)
    with pytest.raises(InvalidInput):
        PrizeSpec.custom(2, interim=lambda x, w: w).prize_bound()
    with pytest.raises(InvalidInput):
        PrizeSpec.rank_order([1.0, 0.0]).index_value(Grid.uniform(5))
