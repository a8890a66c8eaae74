import numpy as np
import pytest

from distcomp.core.validation import InvalidInput, NoConvergence
from distcomp.games.costfun import CostModel, validate
from distcomp.games.eqsolver import (
    atom_shift_gain,
    best_response,
    diagonal_payoff,
    kkt_residual,
    net_return,
    planner_objective,
    response_gain,
    solve_planner,
    solve_symmetric_equilibrium,
    start_distribution,
)
from distcomp.games.functions import build_function
from distcomp.games.gridmeasure import Grid, GridDistribution, levy_distance, max_interior_atom
from distcomp.games.prizes import PrizeSpec, interim_prize
from distcomp.models.schemas import SolveMode, SolverConfig, SolverMethod, StartKind

WTA2 = PrizeSpec.rank_order([1.0, 0.0])


@pytest.fixture
def congested_cost():
    """gamma(x) = 2x plus a linear rank penalty; the game operator is strictly monotone."""
    return CostModel.separable(
        build_function({"form": "power", "a": 2.0, "p": 1.0}),
        build_function({"form": "affine", "a": 0.0, "b": 1.0}),
    )


@pytest.fixture
def fixed_prize():
    """Interim prize 1.5x whatever the opponents do."""
    return PrizeSpec.custom(2, interim=lambda x, w: 1.5 * np.broadcast_to(x, np.shape(w)), pi_bar=1.5)


def test_level_sweep_all_pay_pair(linear_cost, grid_201):
    F, report = solve_symmetric_equilibrium(WTA2, linear_cost, SolverConfig(), grid=grid_201)
    assert report.converged
    assert report.method == SolverMethod.LEVEL_SWEEP.value
    # Continuous solution is uniform on [0, 1/2].
    assert F.cdf[grid_201.index_of(0.25)] == pytest.approx(0.5, abs=0.02)
    assert F.support().max() <= 0.5 + 0.02


def test_report_fields_are_consistent(linear_cost, grid_201):
    F, report = solve_symmetric_equilibrium(WTA2, linear_cost, grid=grid_201)
    phi = net_return(WTA2, linear_cost, F)
    assert report.lambda_ == pytest.approx(float(np.dot(phi, F.weights)))
    assert report.sup_violation == pytest.approx(float(phi.max()) - report.lambda_)
    data = report.to_dict()
    assert data["lambda"] == report.lambda_
    assert data["support_size"] == report.support.size


def test_mirror_prox_matches_level_sweep(congested_cost, grid_small, fast_solver):
    swept, sweep_report = solve_symmetric_equilibrium(WTA2, congested_cost, fast_solver, grid=grid_small)
    prox_cfg = fast_solver.model_copy(update={"method": SolverMethod.MIRROR_PROX})
    proxed, prox_report = solve_symmetric_equilibrium(WTA2, congested_cost, prox_cfg, grid=grid_small)
    assert sweep_report.converged and prox_report.converged
    assert prox_report.method == "mirror_prox"
    assert levy_distance(swept, proxed) <= 0.05


def test_damped_best_response_reaches_fixed_response(fixed_prize, congested_cost, grid_small):
    cfg = SolverConfig(method=SolverMethod.DAMPED_BEST_RESPONSE, kkt_tol=1e-2, max_iter=200)
    F, report = solve_symmetric_equilibrium(fixed_prize, congested_cost, cfg, grid=grid_small)
    assert report.converged
    assert report.method == "damped_best_response"


def test_damped_limit_does_not_depend_on_damping(fixed_prize, congested_cost, grid_small):
    results = []
    for tau in (0.3, 0.7):
        cfg = SolverConfig(method=SolverMethod.DAMPED_BEST_RESPONSE, damping=tau, kkt_tol=1e-3, max_iter=300)
        results.append(solve_symmetric_equilibrium(fixed_prize, congested_cost, cfg, grid=grid_small))
    (F_slow, report_slow), (F_fast, report_fast) = results
    assert report_slow.converged and report_fast.converged
    assert abs(report_slow.lambda_ - report_fast.lambda_) <= 10 * 1e-3
    # Warm-started responses may keep a sliver of mass one grid step above zero.
    assert levy_distance(F_slow, F_fast) <= grid_small.max_step


def test_interior_atoms_vanish_under_refinement(linear_cost):
    atoms, multipliers = [], []
    for size in (101, 201, 401):
        F, report = solve_symmetric_equilibrium(WTA2, linear_cost, SolverConfig(), grid=Grid.uniform(size))
        assert report.converged
        atoms.append(max_interior_atom(F))
        multipliers.append(report.lambda_)
        assert atoms[-1] <= 5.0 / size
    assert atoms[0] > atoms[1] > atoms[2]
    assert max(multipliers) - min(multipliers) <= 5e-3


def test_best_response_is_optimal_against_point_masses(congested_cost, grid_small):
    cfg = SolverConfig(kkt_tol=1e-3)
    F = GridDistribution.uniform(grid_small)
    a = interim_prize(WTA2, F)
    H = best_response(WTA2, F, congested_cost, cfg)
    for x in grid_small.points[::5]:
        assert response_gain(a, congested_cost, H, GridDistribution.point_mass(grid_small, x)) <= cfg.kkt_tol


def test_best_response_respects_mean_slice(congested_cost, grid_small):
    cfg = SolverConfig(kkt_tol=1e-2, mean_constraint=0.3)
    H = best_response(WTA2, GridDistribution.uniform(grid_small), congested_cost, cfg)
    assert H.mean == pytest.approx(0.3, abs=1e-9)


def test_mean_constrained_equilibrium(congested_cost, grid_small, fast_solver):
    cfg = fast_solver.model_copy(update={"mean_constraint": 0.3})
    F, report = solve_symmetric_equilibrium(WTA2, congested_cost, cfg, grid=grid_small)
    assert report.method == "mirror_prox"
    assert F.mean == pytest.approx(0.3, abs=1e-8)
    assert report.mean_multiplier is not None


def test_atom_shift_gain_from_top_atom(linear_cost, grid_small):
    F = GridDistribution.point_mass(grid_small, 1.0)
    assert atom_shift_gain(WTA2, F, linear_cost, 0.2) == pytest.approx(0.3, abs=1e-12)
    assert atom_shift_gain(WTA2, F, linear_cost, 0.0) == 0.0
    with pytest.raises(InvalidInput):
        atom_shift_gain(WTA2, GridDistribution.uniform(grid_small), linear_cost, 0.5)


def test_equilibrium_diagonal_payoff_matches_multiplier(linear_cost, grid_201):
    F, report = solve_symmetric_equilibrium(WTA2, linear_cost, grid=grid_201)
    # Linear costs start at zero, so the payoff of an equilibrium is its multiplier.
    assert diagonal_payoff(WTA2, linear_cost, F) == pytest.approx(report.lambda_, abs=1e-9)


def test_planner_with_constant_aggregate_saves_cost(linear_cost, grid_small, fast_solver):
    F, report = solve_planner(WTA2, linear_cost, fast_solver, grid=grid_small)
    assert report.converged
    assert F.weights[0] > 0.99
    assert planner_objective(WTA2, linear_cost, F) == pytest.approx(0.5, abs=1e-6)


def test_planner_restarts_pick_a_certified_candidate(congested_cost, grid_small, fast_solver):
    race = PrizeSpec.min_race(2, lambda t: np.exp(-np.asarray(t, dtype=float)))
    F, report = solve_planner(race, congested_cost, fast_solver, restarts=2, grid=grid_small)
    assert report.converged
    assert kkt_residual(race, F, congested_cost, SolveMode.PLANNER, fast_solver).converged


def test_method_preconditions(congested_cost, grid_small):
    with pytest.raises(InvalidInput):
        solve_symmetric_equilibrium(WTA2, congested_cost,
                                    SolverConfig(method=SolverMethod.LEVEL_SWEEP, mean_constraint=0.4), grid=grid_small)
    with pytest.raises(InvalidInput):
        solve_planner(WTA2, congested_cost, SolverConfig(method=SolverMethod.DAMPED_BEST_RESPONSE), grid=grid_small)
    with pytest.raises(InvalidInput):
        solve_planner(WTA2, congested_cost, restarts=0, grid=grid_small)


def test_no_convergence_carries_best_iterate(congested_cost, grid_small):
    cfg = SolverConfig(method=SolverMethod.MIRROR_PROX, max_iter=1, kkt_tol=1e-9)
    with pytest.raises(NoConvergence) as excinfo:
        solve_symmetric_equilibrium(WTA2, congested_cost, cfg, grid=grid_small)
    assert isinstance(excinfo.value.result, GridDistribution)
    assert excinfo.value.report.iterations == 1


def test_on_iterate_sees_every_certificate(congested_cost, grid_small):
    seen = []
    cfg = SolverConfig(method=SolverMethod.MIRROR_PROX, max_iter=5, kkt_tol=1e-9)
    with pytest.raises(NoConvergence):
        solve_symmetric_equilibrium(WTA2, congested_cost, cfg, grid=grid_small,
                                    on_iterate=lambda k, F, report: seen.append(k))
    assert seen == [1, 2, 3, 4, 5]


def test_start_distributions(grid_small):
    quadratic = start_distribution(grid_small, SolverConfig(start=StartKind.QUADRATIC))
    assert np.allclose(quadratic.cdf, grid_small.points ** 2)
    zero = start_distribution(grid_small, SolverConfig(start=StartKind.POINT_MASS_ZERO))
    assert zero.weights[0] == 1.0
    with pytest.raises(InvalidInput):
        start_distribution(grid_small, SolverConfig(start=StartKind.GIVEN))
    with pytest.raises(InvalidInput):
        start_distribution(grid_small, SolverConfig(), GridDistribution.uniform(Grid.uniform(7)))
    tilted = start_distribution(grid_small, SolverConfig(mean_constraint=0.2))
    assert tilted.mean == pytest.approx(0.2, abs=1e-10)


@pytest.mark.parametrize("prizes", [[1.0, 0.0], [0.7, 0.3, 0.0]])
def test_atom_shift_gain_exceeds_margin_on_random_distributions(prizes, linear_cost, congested_cost,
                                                                grid_small, rng):
    eta1, alpha = 0.5, 0.1
    spec = PrizeSpec.rank_order(prizes)
    for cost in (linear_cost, congested_cost):
        assert validate(cost, pi_bar=1.0, eta1=eta1, trial_count=6, seed=0).passed
        for _ in range(20):
            weights = (1.0 - alpha) * rng.dirichlet(np.full(grid_small.size, 0.5))
            weights[-1] += alpha
            F = GridDistribution(grid_small, weights)
            assert atom_shift_gain(spec, F, cost, alpha) >= eta1 * alpha - 1e-3
