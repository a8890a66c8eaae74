"""
Winner-take-all races in time: risky R&D and price-free quality competition.

Players choose the law of their success time T in [0, infinity]; the first to
succeed wins V(T). Time maps to the index x = 1/(1 + t), so a race is a local
game on the x-grid: faster means higher x, and x = 0 carries t = infinity
with V = 0 and marginal cost c_inf. Equilibrium and planner are solved with
the general solver and compared in first-order dominance; the equilibrium
finishing faster than the planner is overinvestment.
"""
from dataclasses import dataclass
from typing import Any, Callable, Dict, Optional
import logging

import numpy as np
import pandas as pd

from ..core.config import settings
from ..core.validation import AssumptionViolated, InvalidInput, check_positive
from ..models.schemas import CostKind, RaceCommandSpec, RaceMode, SolverConfig
from .costfun import CostModel, CostValidation, kernel, validate
from .eqsolver import KKTReport, planner_objective, solve_planner, solve_symmetric_equilibrium
from .functions import build_function
from .gridmeasure import Grid, GridDistribution, OrderVerdict, fosd_compare, t_of_x, x_of_t
from .prizes import PrizeSpec, planner_gradient

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class TimeGrid:
    """Time points induced by an x-grid; t(0) is the infinity sentinel."""

    x_grid: Grid

    @classmethod
    def from_size(cls, size: Optional[int] = None) -> "TimeGrid":
        return cls(Grid.uniform(size))

    @property
    def t_points(self) -> np.ndarray:
        return t_of_x(self.x_grid.points)

    @property
    def size(self) -> int:
        return self.x_grid.size

    def index_of(self, t: float) -> int:
        """Grid index of time t (infinity maps to index 0)."""
        if np.isinf(t):
            return 0
        if t < 0.0:
            raise InvalidInput(f"time must be >= 0, got {t}")
        idx = int(np.argmin(np.abs(self.t_points - t)))
        if abs(self.t_points[idx] - t) > settings.GRID_SNAP_TOL * max(1.0, abs(t)):
            raise InvalidInput(f"t = {t} is not a grid time")
        return idx


@dataclass(frozen=True)
class RaceSpec:
    """A symmetric race.

    Attributes:
        n: Number of players
        mode: rd (V = exp(-r t)) or quality (V = m D(1/(1 + t)))
        cost: Tail-local cost in the time coordinate
        grid: Time grid
        r: Discount rate (rd)
        m: Margin (quality)
        demand: D on [0, 1] (quality)
        eta1: Margin required of the cost validation
    """

    n: int
    mode: RaceMode
    cost: CostModel
    grid: TimeGrid
    r: float = 1.0
    m: float = 1.0
    demand: Optional[Callable] = None
    eta1: float = 0.1

    def __post_init__(self):
        if int(self.n) < 2:
            raise InvalidInput(f"n must be >= 2, got {self.n}")
        if CostKind(self.cost.kind) != CostKind.TAIL_LOCAL:
            raise InvalidInput(f"races need a tail-local cost, got {CostKind(self.cost.kind).value}")
        if RaceMode(self.mode) == RaceMode.RD:
            check_positive(self.r, "r")
        else:
            check_positive(self.m, "m")
            if self.demand is None:
                raise InvalidInput("quality races need a demand function D")
            q = self.grid.x_grid.points
            D = np.broadcast_to(np.asarray(self.demand(q), dtype=float), q.shape)
            if abs(D[0]) > 1e-12:
                raise InvalidInput(f"demand must satisfy D(0) = 0, got {D[0]:g}")
            if np.any(D[1:] <= 0.0):
                raise InvalidInput("demand must be positive for q > 0")
            if np.any(np.diff(D) < -1e-12):
                raise InvalidInput("demand must be nondecreasing")

    @classmethod
    def from_command(cls, spec: RaceCommandSpec, grid: TimeGrid, mode: Optional[RaceMode] = None) -> "RaceSpec":
        mode = RaceMode(mode or spec.mode)
        demand = None
        if mode == RaceMode.QUALITY:
            if spec.demand is None:
                raise InvalidInput("quality races need 'demand'")
            demand = build_function(spec.demand)
        return cls(n=spec.n, mode=mode, cost=CostModel.from_spec(spec.cost), grid=grid,
                   r=spec.r, m=spec.m, demand=demand, eta1=spec.eta1)

    def V(self, t):
        """Winner's prize at finite times."""
        t = np.asarray(t, dtype=float)
        if RaceMode(self.mode) == RaceMode.RD:
            return np.exp(-self.r * t)
        return self.m * np.asarray(self.demand(x_of_t(t)), dtype=float)

    @property
    def prize(self) -> PrizeSpec:
        return PrizeSpec.min_race(self.n, self.V)

    @property
    def pi_bar(self) -> float:
        return float(self.V(0.0))


def _vhat(spec: RaceSpec) -> np.ndarray:
    return spec.prize.index_value(spec.grid.x_grid)


def time_cdf(F: GridDistribution, midpoint: bool = False) -> np.ndarray:
    """P(T <= t) at every grid time; midpoint counts half of the atom at t."""
    return 1.0 - (F.cdf_mid if midpoint else F.cdf_left)


def _require_grid(spec: RaceSpec, H: GridDistribution) -> None:
    if H.grid != spec.grid.x_grid:
        raise InvalidInput("distribution does not live on the race grid")


def phi_values(spec: RaceSpec, H: GridDistribution) -> np.ndarray:
    """V(t)(1 - H(t))^(n-1) - c_H(t) at every grid time; -c_inf at infinity."""
    _require_grid(spec, H)
    survival = H.cdf_left
    values = _vhat(spec) * np.power(survival, spec.n - 1) - kernel(spec.cost, H.grid, H.weights)
    values[0] = -spec.cost.c_inf
    return values


def phi(spec: RaceSpec, H: GridDistribution, t: float) -> float:
    """Reduced-form net payoff of finishing at t against n - 1 opponents drawing from H."""
    return float(phi_values(spec, H)[spec.grid.index_of(t)])


def v_tilde_values(spec: RaceSpec, H: GridDistribution) -> np.ndarray:
    """E[V(M) 1{M > t}] with M the earliest of n - 1 opponent times."""
    _require_grid(spec, H)
    increments = np.diff(np.power(H.cdf, spec.n - 1), prepend=0.0)
    contributions = _vhat(spec) * increments
    return np.cumsum(contributions) - contributions


def v_tilde(spec: RaceSpec, H: GridDistribution, t: float) -> float:
    return float(v_tilde_values(spec, H)[spec.grid.index_of(t)])


def aggregate_decomposition_residuals(spec: RaceSpec, F: GridDistribution) -> np.ndarray:
    """|A_F(t) - A_F(inf) - V(t)(1 - F(t))^(n-1) + V-tilde_F(t)| at every grid time."""
    A = planner_gradient(spec.prize, F)
    right = A[0] + _vhat(spec) * np.power(F.cdf_left, spec.n - 1) - v_tilde_values(spec, F)
    right[0] = A[0]
    return np.abs(A - right)


def aggregate_decomposition_check(spec: RaceSpec, F: GridDistribution, t: float) -> float:
    """Residual of the aggregate-prize decomposition at time t."""
    return float(aggregate_decomposition_residuals(spec, F)[spec.grid.index_of(t)])


def v_tilde_bounds_hold(spec: RaceSpec, H: GridDistribution, atol: float = 1e-12) -> bool:
    """0 <= V-tilde_H(t) <= V(t)(1 - H(t))^(n-1) <= V(t) at every grid time."""
    vt = v_tilde_values(spec, H)
    vhat = _vhat(spec)
    middle = vhat * np.power(H.cdf_left, spec.n - 1)
    return bool(np.all(vt >= -atol) and np.all(vt <= middle + atol) and np.all(middle <= vhat + atol))


def expected_first_success(F: GridDistribution, n: int) -> float:
    """E[min of n iid success times]; infinite when nobody may ever succeed."""
    probs = np.diff(np.power(F.cdf, int(n)), prepend=0.0)
    t = t_of_x(F.points)
    if probs[0] > 0.0:
        return float("inf")
    return float(np.dot(np.where(np.isinf(t), 0.0, t), probs))


@dataclass
class RaceSolution:
    spec: RaceSpec
    F_eq: GridDistribution
    G_pl: GridDistribution
    report_eq: KKTReport
    report_pl: KKTReport
    lambda_g: float
    lambda_p_bar: float
    lambda_p: float
    fosd: OrderVerdict
    cost_validation: Optional[CostValidation] = None
    conditional_fosd: Optional[bool] = None
    unbounded_eq: bool = False
    unbounded_pl: bool = False
    expected_time_eq: float = float("inf")
    expected_time_pl: float = float("inf")
    welfare_eq: float = 0.0
    welfare_pl: float = 0.0

    @property
    def overinvestment(self) -> bool:
        return self.fosd.dominates

    @property
    def pinning_gaps(self) -> Dict[str, float]:
        c_inf = self.spec.cost.c_inf
        return {"game": abs(self.lambda_g + c_inf), "planner": abs(self.lambda_p + c_inf)}

    @property
    def mean_quality(self) -> Dict[str, float]:
        return {"equilibrium": self.F_eq.mean, "planner": self.G_pl.mean}

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame({
            "t": self.spec.grid.t_points,
            "F_eq": time_cdf(self.F_eq),
            "G_pl": time_cdf(self.G_pl),
            "phi_eq": phi_values(self.spec, self.F_eq),
            "phi_pl": phi_values(self.spec, self.G_pl),
            "v_tilde": v_tilde_values(self.spec, self.G_pl),
        })

    def to_dict(self) -> Dict[str, Any]:
        return {
            "mode": RaceMode(self.spec.mode).value,
            "n": self.spec.n,
            "lambda_g": self.lambda_g,
            "lambda_p_bar": self.lambda_p_bar,
            "lambda_p": self.lambda_p,
            "pinning_gaps": self.pinning_gaps,
            "fosd": self.fosd.to_dict(),
            "overinvestment": self.overinvestment,
            "conditional_fosd": self.conditional_fosd,
            "unbounded_support": {"game": self.unbounded_eq, "planner": self.unbounded_pl},
            "expected_first_success": {"game": self.expected_time_eq, "planner": self.expected_time_pl},
            "welfare": {"game": self.welfare_eq, "planner": self.welfare_pl},
            "mean_quality": self.mean_quality,
            "kkt": {"game": self.report_eq.to_dict(), "planner": self.report_pl.to_dict()},
        }


def _touches_tail(F: GridDistribution, eps: float) -> bool:
    return bool(F.weights[0] > eps or F.weights[1] > eps)


def solve_race(spec: RaceSpec, cfg: Optional[SolverConfig] = None, validate_cost: bool = True,
               trial_count: int = 20) -> RaceSolution:
    """
    Equilibrium and planner solves of a race with their multipliers and FOSD verdict.

    Raises:
        AssumptionViolated: If the cost fails validation
        NoConvergence: Propagated from either solve
    """
    cfg = cfg or SolverConfig()
    grid = spec.grid.x_grid
    validation = None
    if validate_cost:
        validation = validate(spec.cost, spec.pi_bar, spec.eta1, trial_count, cfg.seed)
        if not validation.passed:
            raise AssumptionViolated(f"race cost failed validation: {validation.first_violation}")

    prize = spec.prize
    F_eq, report_eq = solve_symmetric_equilibrium(prize, spec.cost, cfg, grid=grid)
    G_pl, report_pl = solve_planner(prize, spec.cost, cfg, grid=grid)

    lambda_g = report_eq.lambda_
    lambda_p_bar = report_pl.lambda_
    lambda_p = lambda_p_bar - float(planner_gradient(prize, G_pl, cfg)[0])

    # The equilibrium finishing earlier in time means it dominates in the index x.
    tol = 5.0 * cfg.kkt_tol
    fosd = fosd_compare(F_eq, G_pl, tol, midpoint=True)
    conditional = None
    if lambda_p >= lambda_g - cfg.kkt_tol:
        conditional = bool(np.all(time_cdf(F_eq, True) >= time_cdf(G_pl, True) - 10.0 * cfg.kkt_tol))

    solution = RaceSolution(
        spec=spec,
        F_eq=F_eq,
        G_pl=G_pl,
        report_eq=report_eq,
        report_pl=report_pl,
        lambda_g=lambda_g,
        lambda_p_bar=lambda_p_bar,
        lambda_p=lambda_p,
        fosd=fosd,
        cost_validation=validation,
        conditional_fosd=conditional,
        unbounded_eq=_touches_tail(F_eq, cfg.support_eps),
        unbounded_pl=_touches_tail(G_pl, cfg.support_eps),
        expected_time_eq=expected_first_success(F_eq, spec.n),
        expected_time_pl=expected_first_success(G_pl, spec.n),
        welfare_eq=planner_objective(prize, spec.cost, F_eq, cfg),
        welfare_pl=planner_objective(prize, spec.cost, G_pl, cfg),
    )
    logger.info(f"Race ({RaceMode(spec.mode).value}, n={spec.n}): lambda_g = {lambda_g:.6g}, "
                f"lambda_p = {lambda_p:.6g}, overinvestment {fosd.relation.value}")
    return solution


def quality_race(spec: RaceSpec, cfg: Optional[SolverConfig] = None, validate_cost: bool = True,
                 trial_count: int = 20) -> RaceSolution:
    """Quality competition: the race pipeline with V_q; dominance reads as overprovision of quality q = x."""
    if RaceMode(spec.mode) != RaceMode.QUALITY:
        raise InvalidInput("quality_race needs a race spec in quality mode")
    return solve_race(spec, cfg, validate_cost, trial_count)
