"""
Rank-order contests: closed-form equilibria and their comparative statics.

With a separable cost gamma(x) + beta(F(x)) and v1 > v2, the symmetric
equilibrium is atomless on [0, x-bar] and solves gamma(x) = g(F(x)) with
g(q) = Psi(q; v) - beta(q). More unequal prizes raise output in the increasing
convex order; more entrants lower it in the first-order sense.
"""
from dataclasses import dataclass, field
from typing import Any, Callable, Dict, List, Optional, Sequence, Union
import logging

import numpy as np
from scipy.optimize import bisect
from scipy.special import comb, roots_legendre

from ..core.config import settings
from ..core.validation import AssumptionViolated, InvalidInput, check_unit_interval
from ..models.schemas import CostKind, OrderRelation, SolverConfig
from .costfun import CostModel
from .gridmeasure import (
    Grid,
    GridDistribution,
    OrderVerdict,
    PrizeVector,
    convex_order_compare,
    fosd_compare,
    icx_compare,
    levy_distance,
    majorizes,
    pigou_dalton_path,
    quantile_values,
)

logger = logging.getLogger(__name__)

Q_POINTS = 1001
BISECTION_STEPS = 60


def _psi_array(q: np.ndarray, v: PrizeVector) -> np.ndarray:
    n = v.n
    k = np.arange(1, n + 1)
    q = np.asarray(q, dtype=float)[..., None]
    terms = comb(n - 1, k - 1) * np.power(q, n - k) * np.power(1.0 - q, k - 1) * v.v
    return terms.sum(axis=-1)


def psi(q: float, v: PrizeVector) -> float:
    """Rank-order benefit Psi(q; v): expected prize at quantile q of an atomless common law."""
    check_unit_interval(q, "q")
    return float(_psi_array(np.array(q), v))


def psi_mean_check(v: PrizeVector, nodes: int = 101) -> float:
    """Gauss-Legendre value of the integral of Psi over [0, 1]; equals 1/n for every prize vector."""
    if int(nodes) < 101:
        raise InvalidInput(f"psi_mean_check needs at least 101 nodes, got {nodes}")
    roots, weights = roots_legendre(int(nodes))
    return float(0.5 * np.dot(weights, _psi_array(0.5 * (roots + 1.0), v)))


def g_function(q, v: PrizeVector, beta: Callable) -> np.ndarray:
    """g(q) = Psi(q; v) - beta(q)."""
    q = np.asarray(q, dtype=float)
    return _psi_array(q, v) - np.broadcast_to(np.asarray(beta(q), dtype=float), q.shape)


@dataclass(frozen=True)
class ContestSpec:
    v: PrizeVector
    cost: CostModel

    @property
    def n(self) -> int:
        return self.v.n

    @property
    def top_prize_strict(self) -> bool:
        """v1 > v2, the tie-breaking condition behind uniqueness."""
        return bool(self.v.v[0] > self.v.v[1])

    @classmethod
    def of(cls, prizes: Union[PrizeVector, Sequence[float]], cost: CostModel) -> "ContestSpec":
        return cls(prizes if isinstance(prizes, PrizeVector) else PrizeVector.of(prizes), cost)

    def check_closed_form(self, q_points: int = Q_POINTS) -> np.ndarray:
        """
        Check the closed-form preconditions and return g on the q-grid.

        Raises:
            InvalidInput: If the cost is not separable
            AssumptionViolated: If g is not strictly increasing
        """
        if CostKind(self.cost.kind) != CostKind.SEPARABLE:
            raise InvalidInput(f"closed-form contests need a separable cost, got {CostKind(self.cost.kind).value}")
        if not self.top_prize_strict:
            logger.warning(f"v1 = v2 = {self.v.v[0]:g}: the closed form is an equilibrium but uniqueness is not guaranteed")
        qs = np.linspace(0.0, 1.0, q_points)
        g = g_function(qs, self.v, self.cost.beta)
        steps = np.diff(g)
        if np.any(steps <= 0.0):
            where = float(qs[int(np.argmax(steps <= 0.0))])
            raise AssumptionViolated(f"g = Psi - beta is not strictly increasing on [0, 1] (fails near q = {where:.4g})")
        return g


@dataclass
class ContestEquilibrium:
    F: GridDistribution
    support_upper: float
    lambda_: float
    q_grid: np.ndarray
    g_samples: np.ndarray
    boundary: bool = False
    unique: bool = True

    def to_dict(self) -> Dict[str, Any]:
        return {
            "support_upper": self.support_upper,
            "lambda": self.lambda_,
            "boundary": self.boundary,
            "unique": self.unique,
            "expected_output": expected_output(self.F),
        }


def _invert_increasing(fn: Callable[[np.ndarray], np.ndarray], targets: np.ndarray) -> np.ndarray:
    """Vectorized bisection for fn(q) = target on [0, 1], fn increasing."""
    lo = np.zeros_like(targets)
    hi = np.ones_like(targets)
    for _ in range(BISECTION_STEPS):
        mid = 0.5 * (lo + hi)
        below = fn(mid) < targets
        lo = np.where(below, mid, lo)
        hi = np.where(below, hi, mid)
    return 0.5 * (lo + hi)


def solve_closed_form(spec: ContestSpec, grid: Optional[Grid] = None) -> ContestEquilibrium:
    """
    Closed-form symmetric equilibrium F(x) = g^{-1}(gamma(x)) on [0, x-bar].

    Raises:
        AssumptionViolated: If g is not strictly increasing or gamma(1) < g(1)
        InvalidInput: If the cost is not separable
    """
    grid = grid or Grid.uniform()
    g_samples = spec.check_closed_form()
    qs = np.linspace(0.0, 1.0, g_samples.size)
    gamma = spec.cost.gamma
    top = float(g_samples[-1])
    gamma_top = float(gamma(1.0))

    if gamma_top < top - 1e-12:
        raise AssumptionViolated(
            f"gamma(1) = {gamma_top:.6g} < v1 - beta(1) = {top:.6g}: the equilibrium support would exceed [0, 1]"
        )
    boundary = abs(gamma_top - top) <= 1e-12
    if boundary:
        x_bar = 1.0
        logger.info("gamma(1) equals v1 - beta(1): support reaches 1 without an atom")
    else:
        x_bar = bisect(lambda x: float(gamma(x)) - top, 0.0, 1.0, xtol=1e-12)

    x = grid.points
    targets = np.minimum(np.broadcast_to(np.asarray(gamma(x), dtype=float), x.shape), top)
    cdf = _invert_increasing(lambda q: g_function(q, spec.v, spec.cost.beta), targets)
    cdf = np.where(x >= x_bar, 1.0, cdf)
    cdf[0] = 0.0 if x[0] < x_bar else 1.0
    F = GridDistribution.from_cdf(grid, cdf)
    logger.debug(f"Closed-form contest n={spec.n}: support [0, {x_bar:.6g}]")
    return ContestEquilibrium(F=F, support_upper=float(x_bar), lambda_=0.0, q_grid=qs,
                              g_samples=g_samples, boundary=boundary, unique=spec.top_prize_strict)


def expected_output(F: GridDistribution) -> float:
    return F.mean


def expected_max_output(F: GridDistribution, n: int) -> float:
    """E[max of n iid draws from F]."""
    return float(np.dot(F.points, np.diff(np.power(F.cdf, int(n)), prepend=0.0)))


def _gauss_mean(fn: Callable[[np.ndarray], np.ndarray], nodes: int = 201) -> float:
    roots, weights = roots_legendre(nodes)
    return float(0.5 * np.dot(weights, fn(0.5 * (roots + 1.0))))


def _sign_changes(diff: np.ndarray, qs: np.ndarray, eps: float = 1e-12) -> List[float]:
    signs = np.sign(np.where(np.abs(diff) <= eps, 0.0, diff))
    nonzero = np.flatnonzero(signs)
    changes = []
    for a, b in zip(nonzero, nonzero[1:]):
        if signs[a] != signs[b]:
            changes.append(float(0.5 * (qs[a] + qs[b])))
    return changes


@dataclass
class IcxCheck:
    """Outcome of the prize-inequality comparison of two contests."""

    verdict: OrderVerdict
    quantile_verdict: OrderVerdict
    equilibrium_v: ContestEquilibrium
    equilibrium_w: ContestEquilibrium
    quantile_match: Dict[str, float]
    crossings: List[float]
    quadrature_means: Dict[str, float]
    grid_means: Dict[str, float]
    transfers: int

    @property
    def dominates(self) -> bool:
        return self.verdict.dominates and self.quantile_verdict.dominates

    def to_dict(self) -> Dict[str, Any]:
        return {
            "icx": self.verdict.to_dict(),
            "quantile_cx": self.quantile_verdict.to_dict(),
            "icx_dominates": self.dominates,
            "quantile_match": self.quantile_match,
            "crossings": self.crossings,
            "quadrature_means": self.quadrature_means,
            "grid_means": self.grid_means,
            "transfers": self.transfers,
            "support_upper_v": self.equilibrium_v.support_upper,
            "support_upper_w": self.equilibrium_w.support_upper,
        }


def icx_theorem_check(spec_v: ContestSpec, spec_w: ContestSpec, grid: Optional[Grid] = None,
                      tol: Optional[float] = None) -> IcxCheck:
    """
    Compare the equilibria under prize vectors v and w, with w majorizing v.

    Checks that gamma(X) and gamma(Y) have quantile functions g_v and g_w, that
    g_w dominates g_v in the convex order, and that Y dominates X in the
    increasing convex order on the grid.

    Raises:
        InvalidInput: If the contests differ in n or w does not majorize v
        AssumptionViolated: Propagated from either closed form
    """
    grid = grid or Grid.uniform()
    if spec_v.n != spec_w.n:
        raise InvalidInput(f"contests differ in n ({spec_v.n} vs {spec_w.n})")
    if not majorizes(spec_w.v, spec_v.v):
        raise InvalidInput("w must majorize v")

    eq_v = solve_closed_form(spec_v, grid)
    eq_w = solve_closed_form(spec_w, grid)
    qs = eq_v.q_grid
    gamma = spec_v.cost.gamma
    beta = spec_v.cost.beta

    quantile_verdict = convex_order_compare(eq_v.g_samples, eq_w.g_samples)
    # The grid step bounds how far a step cdf's integrated survival can sit from the continuum's.
    floor = 2.0 * grid.max_step ** 1.5
    tol = max(settings.ORDER_TOL_INTEGRATED if tol is None else tol, floor)
    verdict = icx_compare(eq_w.F, eq_v.F, tol)

    interior = qs[(qs > 0.0) & (qs < 1.0)]
    match = {}
    for label, eq, spec in (("v", eq_v, spec_v), ("w", eq_w, spec_w)):
        z = np.asarray(gamma(quantile_values(eq.F, interior)), dtype=float)
        match[label] = float(np.max(np.abs(z - g_function(interior, spec.v, beta))))

    transfers = len(pigou_dalton_path(spec_v.v, spec_w.v))
    check = IcxCheck(
        verdict=verdict,
        quantile_verdict=quantile_verdict,
        equilibrium_v=eq_v,
        equilibrium_w=eq_w,
        quantile_match=match,
        crossings=_sign_changes(eq_w.g_samples - eq_v.g_samples, qs),
        quadrature_means={
            "v": _gauss_mean(lambda q: g_function(q, spec_v.v, beta)),
            "w": _gauss_mean(lambda q: g_function(q, spec_w.v, beta)),
            "expected": 1.0 / spec_v.n - _gauss_mean(lambda q: np.asarray(beta(q), dtype=float) * np.ones_like(q)),
        },
        grid_means={"v": eq_v.F.expect(gamma), "w": eq_w.F.expect(gamma)},
        transfers=transfers,
    )
    logger.info(f"icx check n={spec_v.n}: {verdict.relation.value} (quantile order {quantile_verdict.relation.value})")
    return check


def general_solver_agreement(spec: ContestSpec, grid: Optional[Grid] = None,
                             cfg: Optional[SolverConfig] = None) -> Dict[str, Any]:
    """Levy distance between the closed form and the general equilibrium solver."""
    from .eqsolver import kkt_residual, solve_symmetric_equilibrium
    from .prizes import PrizeSpec

    grid = grid or Grid.uniform()
    cfg = cfg or SolverConfig()
    closed = solve_closed_form(spec, grid)
    prize = PrizeSpec.rank_order(spec.v)
    F, report = solve_symmetric_equilibrium(prize, spec.cost, cfg, grid=grid)
    closed_report = kkt_residual(prize, closed.F, spec.cost, cfg=cfg)
    return {
        "levy_distance": levy_distance(closed.F, F),
        "solver": F,
        "solver_report": report,
        "closed_form_report": closed_report,
    }


# Entry

def _kappa_of(kappa: Union[CostModel, Callable]) -> Callable:
    if isinstance(kappa, CostModel):
        if CostKind(kappa.kind) != CostKind.LOCAL:
            raise InvalidInput(f"entry analysis needs a local cost, got {CostKind(kappa.kind).value}")
        return kappa.kappa
    return kappa


def entry_quantile(kappa: Union[CostModel, Callable], n: int, q: float) -> float:
    """
    Winner-take-all equilibrium quantile: the x in [0, 1] with kappa(x, q) = q^(n-1).

    Raises:
        AssumptionViolated: If kappa(1, q) < q^(n-1)
    """
    check_unit_interval(q, "q")
    if int(n) < 2:
        raise InvalidInput(f"n must be >= 2, got {n}")
    k = _kappa_of(kappa)
    target = q ** (int(n) - 1)
    fn = lambda x: float(k(x, q)) - target
    if fn(1.0) < 0.0:
        raise AssumptionViolated(f"kappa(1, {q:g}) < q^(n-1) = {target:.6g}: no quantile in [0, 1]")
    if fn(0.0) >= 0.0:
        return 0.0
    return float(bisect(fn, 0.0, 1.0, xtol=1e-12))


def entry_quantiles(kappa: Union[CostModel, Callable], n: int, qs: np.ndarray) -> np.ndarray:
    """Vectorized entry_quantile over a q-grid."""
    k = _kappa_of(kappa)
    qs = np.asarray(qs, dtype=float)
    target = np.power(qs, int(n) - 1)
    short = np.asarray(k(np.ones_like(qs), qs), dtype=float) < target
    if np.any(short):
        raise AssumptionViolated(f"kappa(1, q) < q^(n-1) at q = {float(qs[np.argmax(short)]):.4g}")
    return _invert_increasing(lambda x: np.asarray(k(x, qs), dtype=float), target)


def _entry_cdf(k: Callable, n: int, x: np.ndarray, qs: np.ndarray, Q: np.ndarray) -> np.ndarray:
    """F_n(x) = sup{q : Q_n(q) <= x}: the quantile samples bracket q, bisection refines it."""
    j = np.searchsorted(np.maximum.accumulate(Q), x, side="right") - 1
    full = j >= qs.size - 1
    j = np.clip(j, 0, qs.size - 2)
    lo, hi = qs[j], qs[j + 1]
    for _ in range(BISECTION_STEPS):
        mid = 0.5 * (lo + hi)
        ok = np.asarray(k(x, mid), dtype=float) >= np.power(mid, n - 1)
        lo = np.where(ok, mid, lo)
        hi = np.where(ok, hi, mid)
    return np.where(full, 1.0, 0.5 * (lo + hi))


@dataclass
class EntrySweep:
    n_list: List[int]
    distributions: List[GridDistribution]
    q_grid: np.ndarray
    quantiles: List[np.ndarray]
    verdicts: List[OrderVerdict] = field(default_factory=list)
    closed_form_errors: Optional[List[float]] = None

    @property
    def output_falls(self) -> bool:
        return all(v.relation in (OrderRelation.DOMINATES, OrderRelation.EQUAL) for v in self.verdicts)

    def to_dict(self) -> Dict[str, Any]:
        return {
            "n_list": self.n_list,
            "verdicts": [v.to_dict() for v in self.verdicts],
            "output_falls": self.output_falls,
            "closed_form_errors": self.closed_form_errors,
        }


def entry_sweep(kappa: Union[CostModel, Callable], n_list: Sequence[int], grid: Optional[Grid] = None,
                q_points: int = Q_POINTS, tol: Optional[float] = None,
                closed_form: Optional[Callable[[int, np.ndarray], np.ndarray]] = None) -> EntrySweep:
    """
    Winner-take-all equilibria for each entrant count and their consecutive FOSD verdicts.

    A verdict 'dominates' for (n, n + 1) means F_n lies below F_(n+1): entry lowers output.
    """
    grid = grid or Grid.uniform()
    n_list = [int(n) for n in n_list]
    if not n_list or any(n < 2 for n in n_list):
        raise InvalidInput("n_list must hold entrant counts >= 2")
    if any(b <= a for a, b in zip(n_list, n_list[1:])):
        raise InvalidInput("n_list must be strictly ascending")
    k = _kappa_of(kappa)
    if abs(float(k(0.0, 0.0))) > 1e-12:
        raise AssumptionViolated("entry analysis needs kappa(0, 0) = 0")

    qs = np.linspace(0.0, 1.0, int(q_points))
    x = grid.points
    distributions, quantiles, errors = [], [], []
    for n in n_list:
        Q = entry_quantiles(k, n, qs)
        quantiles.append(Q)
        cdf = _entry_cdf(k, n, x, qs, Q)
        distributions.append(GridDistribution.from_cdf(grid, cdf))
        if closed_form is not None:
            errors.append(float(np.max(np.abs(cdf - closed_form(n, x)))))
        logger.debug(f"Entry sweep: n={n}, mean output {distributions[-1].mean:.6g}")

    verdicts = [fosd_compare(a, b, tol) for a, b in zip(distributions, distributions[1:])]
    return EntrySweep(n_list=n_list, distributions=distributions, q_grid=qs, quantiles=quantiles,
                      verdicts=verdicts, closed_form_errors=errors if closed_form is not None else None)
