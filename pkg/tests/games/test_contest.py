import numpy as np
import pytest

from distcomp.core.validation import AssumptionViolated, InvalidInput
from distcomp.games.contest import (
    ContestSpec,
    entry_quantile,
    entry_quantiles,
    entry_sweep,
    expected_max_output,
    general_solver_agreement,
    icx_theorem_check,
    psi,
    psi_mean_check,
    solve_closed_form,
)
from distcomp.games.costfun import CostModel
from distcomp.games.eqsolver import kkt_residual
from distcomp.games.functions import build_bivariate, build_function
from distcomp.games.gridmeasure import Grid, GridDistribution, PrizeVector, cdf_at
from distcomp.games.prizes import PrizeSpec
from distcomp.models.schemas import OrderRelation, SolverConfig


def separable(gamma_a=2.0, beta=None):
    beta = beta or {"form": "affine", "a": 0.0, "b": 0.0}
    return CostModel.separable(build_function({"form": "power", "a": gamma_a, "p": 1.0}), build_function(beta))


def local_kappa(g=None, form="sum"):
    g = g or {"form": "affine", "a": 0.0, "b": 0.0}
    return CostModel.local(build_bivariate({"form": form, "f": {"form": "power", "a": 1.0, "p": 1.0}, "g": g}))


def test_psi_endpoints_and_pair():
    v = PrizeVector.of([0.6, 0.4, 0.0])
    assert psi(1.0, v) == pytest.approx(0.6)
    assert psi(0.0, v) == pytest.approx(0.0)
    assert psi(0.5, PrizeVector.of([1.0, 0.0])) == pytest.approx(0.5)
    with pytest.raises(InvalidInput):
        psi(1.2, v)


@pytest.mark.parametrize("prizes", [[1.0, 0.0], [1.0, 0.0, 0.0], [0.5, 0.5, 0.0], [0.4, 0.3, 0.2, 0.1, 0.0]])
def test_psi_integrates_to_one_over_n(prizes):
    v = PrizeVector.of(prizes)
    assert psi_mean_check(v) == pytest.approx(1.0 / v.n, abs=1e-8)


def test_psi_mean_check_needs_enough_nodes():
    with pytest.raises(InvalidInput):
        psi_mean_check(PrizeVector.of([1.0, 0.0]), nodes=50)


def test_closed_form_pair_certifies_on_grid(grid_201):
    cost = separable()
    eq = solve_closed_form(ContestSpec.of([1.0, 0.0], cost), grid_201)
    assert eq.support_upper == pytest.approx(0.5, abs=1e-12)
    assert eq.lambda_ == 0.0
    assert not eq.boundary and eq.unique
    assert cdf_at(eq.F, 0.25) == pytest.approx(0.5, abs=1e-9)
    assert eq.F.cdf[0] == 0.0

    report = kkt_residual(PrizeSpec.rank_order([1.0, 0.0]), eq.F, cost)
    step = grid_201.max_step
    assert report.sup_violation == pytest.approx(step, abs=1e-9)
    assert report.lambda_ == pytest.approx(-step, abs=1e-9)
    assert report.sup_violation <= 2.0 / grid_201.size


def test_closed_form_three_players(grid_201):
    eq = solve_closed_form(ContestSpec.of([1.0, 0.0, 0.0], separable()), grid_201)
    assert cdf_at(eq.F, 0.125) == pytest.approx(0.5, abs=1e-9)
    assert eq.support_upper == pytest.approx(0.5, abs=1e-12)
    assert 0.0 < expected_max_output(eq.F, 3) <= 0.5


def test_closed_form_preconditions(grid_small):
    with pytest.raises(AssumptionViolated):
        solve_closed_form(ContestSpec.of([1.0, 0.0], separable(beta={"form": "affine", "a": 0.0, "b": 1.0})), grid_small)
    with pytest.raises(AssumptionViolated):
        solve_closed_form(ContestSpec.of([1.0, 0.0], separable(gamma_a=0.5)), grid_small)
    linear = CostModel.linear(build_function({"form": "power", "a": 2.0, "p": 1.0}))
    with pytest.raises(InvalidInput):
        solve_closed_form(ContestSpec.of([1.0, 0.0], linear), grid_small)


def test_closed_form_boundary_support(grid_small):
    eq = solve_closed_form(ContestSpec.of([1.0, 0.0], separable(gamma_a=1.0)), grid_small)
    assert eq.boundary
    assert eq.support_upper == 1.0
    assert eq.F.weights[-1] < 0.1


def test_tied_top_prizes_are_flagged(grid_small):
    eq = solve_closed_form(ContestSpec.of([0.5, 0.5, 0.0], separable()), grid_small)
    assert not eq.unique
    assert eq.to_dict()["unique"] is False


def test_icx_desk_instance(grid_201):
    cost = separable()
    check = icx_theorem_check(ContestSpec.of([0.5, 0.5, 0.0], cost), ContestSpec.of([1.0, 0.0, 0.0], cost), grid_201)
    assert check.dominates
    assert check.quantile_verdict.relation == OrderRelation.DOMINATES
    assert check.quadrature_means["v"] == pytest.approx(1.0 / 3.0, abs=1e-6)
    assert check.quadrature_means["w"] == pytest.approx(check.quadrature_means["expected"], abs=1e-6)
    assert len(check.crossings) == 1
    assert check.crossings[0] == pytest.approx(2.0 / 3.0, abs=2e-3)
    assert check.transfers >= 1
    assert check.to_dict()["icx_dominates"] is True


def test_single_transfer_crosses_once(grid_small):
    cost = separable()
    check = icx_theorem_check(ContestSpec.of([0.5, 0.3, 0.2, 0.0], cost),
                              ContestSpec.of([0.6, 0.2, 0.2, 0.0], cost), grid_small)
    assert len(check.crossings) == 1
    assert check.transfers == 1


def test_icx_of_identical_prizes_is_equal(grid_small):
    cost = separable()
    spec = ContestSpec.of([0.7, 0.3, 0.0], cost)
    check = icx_theorem_check(spec, spec, grid_small)
    assert check.verdict.relation == OrderRelation.EQUAL
    assert not check.dominates


def test_icx_preconditions(grid_small):
    cost = separable()
    with pytest.raises(InvalidInput):
        icx_theorem_check(ContestSpec.of([1.0, 0.0, 0.0], cost), ContestSpec.of([0.5, 0.5, 0.0], cost), grid_small)
    with pytest.raises(InvalidInput):
        icx_theorem_check(ContestSpec.of([1.0, 0.0], cost), ContestSpec.of([1.0, 0.0, 0.0], cost), grid_small)


def test_general_solver_agrees_with_closed_form(grid_201):
    agreement = general_solver_agreement(ContestSpec.of([1.0, 0.0], separable()), grid_201, SolverConfig())
    assert agreement["solver_report"].converged
    assert agreement["levy_distance"] <= 2.0 * grid_201.max_step


def test_entry_quantile_examples():
    kappa = local_kappa()
    assert entry_quantile(kappa, 3, 0.5) == pytest.approx(0.25, abs=1e-10)
    assert entry_quantile(kappa, 3, 0.0) == 0.0
    assert entry_quantile(kappa, 2, 1.0) == pytest.approx(1.0, abs=1e-10)
    qs = np.linspace(0.0, 1.0, 11)
    assert np.allclose(entry_quantiles(kappa, 4, qs), qs ** 3, atol=1e-12)


def test_entry_quantile_falls_with_n():
    kappa = local_kappa(g={"form": "affine", "a": 1.0, "b": 1.0}, form="product")
    for q in (0.2, 0.5, 0.9):
        values = [entry_quantile(kappa, n, q) for n in (2, 3, 4, 5)]
        assert all(b <= a + 1e-12 for a, b in zip(values, values[1:]))


def test_entry_quantile_needs_enough_cost():
    weak = CostModel.local(build_bivariate({
        "form": "sum", "f": {"form": "power", "a": 0.5, "p": 1.0}, "g": {"form": "affine", "a": 0.0, "b": 0.0},
    }))
    with pytest.raises(AssumptionViolated):
        entry_quantile(weak, 2, 0.9)


def test_entry_sweep_output_falls(grid_201):
    sweep = entry_sweep(local_kappa(), [2, 3, 4], grid_201, q_points=201,
                        closed_form=lambda n, x: np.power(x, 1.0 / (n - 1)))
    assert sweep.output_falls
    assert [v.relation for v in sweep.verdicts] == [OrderRelation.DOMINATES, OrderRelation.DOMINATES]
    assert cdf_at(sweep.distributions[0], 0.25) == pytest.approx(0.25, abs=1e-9)
    assert cdf_at(sweep.distributions[1], 0.25) == pytest.approx(0.5, abs=1e-9)
    assert max(sweep.closed_form_errors) < 1e-9
    assert sweep.to_dict()["output_falls"] is True


def test_entry_cdf_inverts_coarse_quantile_samples(grid_201):
    kappa = build_bivariate({"form": "product", "f": {"form": "power", "a": 1.0, "p": 1.0},
                             "g": {"form": "affine", "a": 1.0, "b": 1.0}})
    # Only 11 quantile samples; the cdf must still match x^(1/(n-1)) for kappa = x.
    sweep = entry_sweep(local_kappa(), [2, 3, 5], grid_201, q_points=11,
                        closed_form=lambda n, x: np.power(x, 1.0 / (n - 1)))
    assert max(sweep.closed_form_errors) < 1e-9

    product = entry_sweep(kappa, [2, 4], grid_201, q_points=11)
    x = grid_201.points
    for F, Q in zip(product.distributions, product.quantiles):
        assert np.all(np.diff(Q) >= 0.0)
        # F(x) >= q for every sample with Q(q) <= x.
        bound = product.q_grid[np.maximum(np.searchsorted(Q, x, side="right") - 1, 0)]
        assert np.all(F.cdf >= bound - 1e-12)
    assert product.output_falls


def test_entry_sweep_single_count_has_no_verdicts(grid_small):
    sweep = entry_sweep(local_kappa(), [2], grid_small)
    assert sweep.verdicts == []
    assert len(sweep.distributions) == 1


def test_entry_sweep_product_kernel(grid_small):
    kappa = build_bivariate({"form": "product", "f": {"form": "power", "a": 1.0, "p": 1.0},
                             "g": {"form": "affine", "a": 1.0, "b": 1.0}})
    assert entry_sweep(kappa, [2, 3, 5], grid_small, q_points=101).output_falls


def test_entry_sweep_rejects_unsorted_counts(grid_small):
    with pytest.raises(InvalidInput):
        entry_sweep(local_kappa(), [3, 2], grid_small)
