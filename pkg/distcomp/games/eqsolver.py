"""
Symmetric equilibria and planner optima on a grid, certified by KKT residuals.

Every solve returns the distribution together with a KKTReport: the net
marginal return Phi = a_F - c_F (game) or A_F - c_F (planner) must equal a
multiplier on the support and lie below it everywhere. The certificate, not
the iteration that produced it, is the contract.
"""
from dataclasses import dataclass
from typing import Any, Callable, Dict, List, Optional, Tuple
import logging

import numpy as np
from scipy.optimize import brentq, minimize_scalar
from scipy.special import logsumexp

from ..core.metrics import record_certificate, track_solve
from ..core.validation import InvalidInput, NoConvergence, check_unit_interval
from ..models.schemas import SolveMode, SolverConfig, SolverMethod, StartKind
from .costfun import CostModel, evaluate, kernel, segment_value
from .gridmeasure import Grid, GridDistribution
from .level_sweep import LocalProblem, sweep_solve
from .prizes import (
    PrizeSpec,
    expected_aggregate,
    interim_batch,
    interim_prize,
    planner_batch,
    planner_gradient,
)

logger = logging.getLogger(__name__)

IterateCallback = Callable[[int, GridDistribution, "KKTReport"], None]


@dataclass
class KKTReport:
    """First-order certificate of a candidate distribution.

    lambda_ is the dF-average of Phi; sup_violation is max Phi - lambda_ (negative
    means slack); comp_gap is the dF-weighted mean of |lambda_ - Phi|.
    """

    lambda_: float
    sup_violation: float
    comp_gap: float
    support: np.ndarray
    converged: bool = False
    iterations: int = 0
    mean_multiplier: Optional[float] = None
    method: str = ""

    @property
    def score(self) -> float:
        return max(self.sup_violation, self.comp_gap)

    def to_dict(self) -> Dict[str, Any]:
        return {
            "lambda": self.lambda_,
            "sup_violation": self.sup_violation,
            "comp_gap": self.comp_gap,
            "converged": self.converged,
            "iterations": self.iterations,
            "support_size": int(self.support.size),
            "support_min": float(self.support.min()) if self.support.size else None,
            "support_max": float(self.support.max()) if self.support.size else None,
            "mean_multiplier": self.mean_multiplier,
            "method": self.method,
        }


def net_return(spec: PrizeSpec, cost: CostModel, F: GridDistribution,
               mode: SolveMode = SolveMode.GAME, cfg: Optional[SolverConfig] = None) -> np.ndarray:
    """Phi on the grid: interim prize (game) or planner gradient (planner) minus c_F."""
    benefit = interim_prize(spec, F, cfg) if SolveMode(mode) == SolveMode.GAME else planner_gradient(spec, F, cfg)
    return benefit - kernel(cost, F.grid, F.weights)


def _report(F: GridDistribution, phi: np.ndarray, cfg: SolverConfig,
            mean_constraint: Optional[float] = None) -> KKTReport:
    w = F.weights
    lam = float(np.dot(phi, w))
    adjusted = phi
    mu = None
    if mean_constraint is not None:
        x = F.points
        centered = x - mean_constraint
        spread = float(np.dot(w, centered ** 2))
        if spread > 1e-12:
            mu = float(np.dot(w, centered * (phi - lam)) / spread)
        else:
            mu = float(minimize_scalar(lambda m: np.max(phi - lam - m * centered),
                                       bounds=(-1e6, 1e6), method="bounded").x)
        adjusted = phi - mu * centered
        lam = float(np.dot(adjusted, w))
    sup = float(np.max(adjusted) - lam)
    gap = float(np.dot(np.abs(lam - adjusted), w))
    converged = sup <= cfg.kkt_tol and gap <= cfg.kkt_tol
    return KKTReport(lambda_=lam, sup_violation=sup, comp_gap=gap, support=F.support(cfg.support_eps),
                     converged=converged, mean_multiplier=mu)


def kkt_residual(spec: PrizeSpec, F: GridDistribution, cost: CostModel, mode: SolveMode = SolveMode.GAME,
                 cfg: Optional[SolverConfig] = None) -> KKTReport:
    """KKT report of F in the game or planner problem."""
    cfg = cfg or SolverConfig()
    phi = net_return(spec, cost, F, mode, cfg)
    return _report(F, phi, cfg, cfg.mean_constraint)


def diagonal_payoff(spec: PrizeSpec, cost: CostModel, F: GridDistribution,
                    cfg: Optional[SolverConfig] = None) -> float:
    """u_1(F, ..., F): expected prize minus cost at the symmetric profile."""
    return float(np.dot(interim_prize(spec, F, cfg), F.weights)) - evaluate(cost, F)


def planner_objective(spec: PrizeSpec, cost: CostModel, F: GridDistribution,
                      cfg: Optional[SolverConfig] = None) -> float:
    """v(F) = E[Pi]/n - C(F)."""
    return expected_aggregate(spec, F, cfg) / spec.n - evaluate(cost, F)


def response_gain(a: np.ndarray, cost: CostModel, H: GridDistribution, other: GridDistribution) -> float:
    """J(other) - J(H) for J = sum a dH - C(H), with the cost difference measured along the segment from H."""
    return float(np.dot(a, other.weights - H.weights) - segment_value(cost, H, other, 1.0)[0])


def atom_shift_gain(spec: PrizeSpec, F: GridDistribution, cost: CostModel, alpha: float,
                    cfg: Optional[SolverConfig] = None) -> float:
    """Payoff change from moving mass alpha from 1 to 0 against symmetric opponents F."""
    check_unit_interval(alpha, "alpha")
    if F.weights[-1] < alpha - 1e-15:
        raise InvalidInput(f"atom at 1 ({F.weights[-1]:.6g}) is smaller than alpha = {alpha}")
    if alpha == 0.0:
        return 0.0
    shifted = F.weights.copy()
    shifted[-1] -= alpha
    shifted[0] += alpha
    H = GridDistribution.from_weights(F.grid, shifted)
    return response_gain(interim_prize(spec, F, cfg), cost, F, H)


# Best responses

def _line_search(a: np.ndarray, cost: CostModel, grid: Grid, H: np.ndarray, d: np.ndarray, top: float) -> float:
    """Exact step along d in [0, top] for the concave J."""
    def slope(step: float) -> float:
        return float(np.dot(a - kernel(cost, grid, H + step * d), d))

    if slope(top) >= 0.0:
        return top
    if slope(0.0) <= 0.0:
        return 0.0
    return brentq(slope, 0.0, top, xtol=1e-15)


def _mean_vertices(x: np.ndarray, m: float) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Index pairs and low-point weights of the vertices of the mean-m slice."""
    lo = np.flatnonzero(x <= m + 1e-15)
    hi = np.flatnonzero(x >= m - 1e-15)
    I, J = np.meshgrid(lo, hi, indexing="ij")
    I, J = I.ravel(), J.ravel()
    width = x[J] - x[I]
    p = np.where(width > 0.0, (x[J] - m) / np.where(width > 0.0, width, 1.0), 1.0)
    return I, J, p


def _best_mean_vertex(g: np.ndarray, x: np.ndarray, m: float) -> np.ndarray:
    I, J, p = _mean_vertices(x, m)
    values = g[I] * p + g[J] * (1.0 - p)
    k = int(np.argmax(values))
    vertex = np.zeros_like(g)
    vertex[I[k]] += p[k]
    vertex[J[k]] += 1.0 - p[k]
    return vertex


def best_response(spec: PrizeSpec, F: GridDistribution, cost: CostModel,
                  cfg: Optional[SolverConfig] = None, a: Optional[np.ndarray] = None) -> GridDistribution:
    """
    Maximize J(H) = sum a_F dH - C(H) over the grid simplex (or its mean slice).

    Pairwise Frank-Wolfe with exact line search on the simplex; classic
    Frank-Wolfe over two-point vertices on the mean slice. Starts from F.

    Raises:
        NoConvergence: If the Frank-Wolfe gap stays above kkt_tol/4 after inner_iter steps
    """
    cfg = cfg or SolverConfig()
    grid = F.grid
    x = grid.points
    a = interim_prize(spec, F, cfg) if a is None else np.asarray(a, dtype=float)
    m = cfg.mean_constraint
    target = cfg.kkt_tol / 4.0

    H = F.weights.copy()
    if m is not None and abs(F.mean - m) > 1e-12:
        H = _best_mean_vertex(a - kernel(cost, grid, H), x, m)

    gap = np.inf
    for k in range(cfg.inner_iter):
        g = a - kernel(cost, grid, H)
        if m is None:
            s = int(np.argmax(g))
            gap = float(g[s] - np.dot(g, H))
            if gap <= target:
                break
            on_support = np.flatnonzero(H > 0.0)
            v = on_support[int(np.argmin(g[on_support]))]
            d = np.zeros_like(H)
            d[s] += 1.0
            d[v] -= 1.0
            step = _line_search(a, cost, grid, H, d, float(H[v]))
            H[s] += step
            H[v] -= step
            H[v] = max(H[v], 0.0)
        else:
            vertex = _best_mean_vertex(g, x, m)
            d = vertex - H
            gap = float(np.dot(g, d))
            if gap <= target:
                break
            step = _line_search(a, cost, grid, H, d, 1.0)
            H = H + step * d
            H = np.clip(H, 0.0, None)
    else:
        result = GridDistribution.from_weights(grid, H)
        raise NoConvergence(f"best response Frank-Wolfe gap {gap:.3e} above {target:.3e} after {cfg.inner_iter} steps",
                            result=result)

    return GridDistribution.from_weights(grid, H)


# Equilibrium and planner solves

def start_distribution(grid: Grid, cfg: SolverConfig, given: Optional[GridDistribution] = None) -> GridDistribution:
    start = StartKind(cfg.start)
    if given is not None or start == StartKind.GIVEN:
        if given is None:
            raise InvalidInput("start 'given' needs a start distribution")
        if given.grid != grid:
            raise InvalidInput("start distribution lives on a different grid")
        F = given
    elif start == StartKind.UNIFORM:
        F = GridDistribution.uniform(grid)
    elif start == StartKind.QUADRATIC:
        F = GridDistribution.from_cdf(grid, grid.points ** 2)
    else:
        F = GridDistribution.point_mass(grid, 0.0)
    if cfg.mean_constraint is not None:
        F = GridDistribution.from_weights(grid, _tilt(np.log(np.maximum(F.weights, 1e-300)), grid.points,
                                                      cfg.mean_constraint))
    return F


def _tilt(logits: np.ndarray, x: np.ndarray, m: Optional[float]) -> np.ndarray:
    """Softmax of logits, exponentially tilted to mean m when given."""
    if m is None:
        return np.exp(logits - logsumexp(logits))
    if m <= x[0] or m >= x[-1]:
        out = np.zeros_like(logits)
        out[0 if m <= x[0] else -1] = 1.0
        return out

    def mean_gap(theta: float) -> float:
        z = logits + theta * x
        return float(np.dot(np.exp(z - logsumexp(z)), x) - m)

    bound = 1.0
    while mean_gap(-bound) > 0.0 or mean_gap(bound) < 0.0:
        bound *= 2.0
        if bound > 1e8:
            raise InvalidInput(f"mean constraint {m} cannot be met on this grid")
    theta = brentq(mean_gap, -bound, bound, xtol=1e-15, rtol=4.5e-16)
    z = logits + theta * x
    return np.exp(z - logsumexp(z))


def _operator(spec: PrizeSpec, cost: CostModel, grid: Grid, mode: SolveMode,
              cfg: SolverConfig) -> Callable[[np.ndarray], np.ndarray]:
    game = SolveMode(mode) == SolveMode.GAME
    oracle = spec.interim if game else spec.planner_interim
    exact = spec.is_local or oracle is not None or (not game and spec.constant_aggregate)

    def phi(weights: np.ndarray) -> np.ndarray:
        if exact:
            benefit = interim_batch(spec, grid, weights) if game else planner_batch(spec, grid, weights)
        else:
            F = GridDistribution.from_weights(grid, weights)
            benefit = interim_prize(spec, F, cfg) if game else planner_gradient(spec, F, cfg)
        return benefit - kernel(cost, grid, weights)
    return phi


def _mirror_prox(spec: PrizeSpec, cost: CostModel, start: GridDistribution, mode: SolveMode,
                 cfg: SolverConfig, on_iterate: Optional[IterateCallback]) -> Tuple[GridDistribution, KKTReport]:
    """Entropic extragradient on Phi with damping, tracking the best certified iterate."""
    grid = start.grid
    x = grid.points
    m = cfg.mean_constraint
    phi = _operator(spec, cost, grid, mode, cfg)
    eta, tau = cfg.step_size, cfg.damping

    W = start.weights.copy()
    best: Optional[Tuple[GridDistribution, KKTReport]] = None
    for k in range(1, cfg.max_iter + 1):
        F = GridDistribution.from_weights(grid, W)
        g = phi(F.weights)
        report = _report(F, g, cfg, m)
        report.iterations = k
        if on_iterate is not None:
            on_iterate(k, F, report)
        if best is None or report.score < best[1].score:
            best = (F, report)
        if report.converged:
            break
        if k % 100 == 0:
            logger.debug(f"mirror_prox iteration {k}: sup {report.sup_violation:.3e}, gap {report.comp_gap:.3e}")

        logW = np.log(np.maximum(F.weights, 1e-300))
        Y = _tilt(logW + eta * g, x, m)
        W_next = _tilt(logW + eta * phi(Y), x, m)
        W = (1.0 - tau) * F.weights + tau * W_next
    return best


def _damped_best_response(spec: PrizeSpec, cost: CostModel, start: GridDistribution, mode: SolveMode,
                          cfg: SolverConfig, on_iterate: Optional[IterateCallback]) -> Tuple[GridDistribution, KKTReport]:
    """F <- (1 - tau) F + tau BR(F) with Frank-Wolfe best responses."""
    if SolveMode(mode) != SolveMode.GAME:
        raise InvalidInput("damped best response applies to games; planners use mirror_prox or level_sweep")
    F = start
    best: Optional[Tuple[GridDistribution, KKTReport]] = None
    for k in range(1, cfg.max_iter + 1):
        a = interim_prize(spec, F, cfg)
        report = _report(F, a - kernel(cost, F.grid, F.weights), cfg, cfg.mean_constraint)
        report.iterations = k
        if on_iterate is not None:
            on_iterate(k, F, report)
        if best is None or report.score < best[1].score:
            best = (F, report)
        if report.converged:
            break
        try:
            H = best_response(spec, F, cost, cfg, a=a)
        except NoConvergence as e:
            H = e.result
        F = F.mixture(H, cfg.damping)
    return best


def _level_sweep(spec: PrizeSpec, cost: CostModel, grid: Grid, mode: SolveMode,
                 cfg: SolverConfig) -> Tuple[GridDistribution, KKTReport]:
    problem = LocalProblem(spec, cost, grid, mode)
    weights, lam, rounds = sweep_solve(problem)
    F = GridDistribution.from_weights(grid, weights)
    report = kkt_residual(spec, F, cost, mode, cfg)
    report.iterations = rounds
    logger.debug(f"level sweep multiplier {lam:.12g}, dF-average {report.lambda_:.12g}")
    return F, report


def _resolve_method(spec: PrizeSpec, cfg: SolverConfig) -> SolverMethod:
    method = SolverMethod(cfg.method)
    sweepable = spec.is_local and cfg.mean_constraint is None
    if method == SolverMethod.LEVEL_SWEEP and not sweepable:
        raise InvalidInput("level_sweep needs a local prize and no mean constraint")
    if method == SolverMethod.AUTO:
        return SolverMethod.LEVEL_SWEEP if sweepable else SolverMethod.MIRROR_PROX
    return method


def _solve(spec: PrizeSpec, cost: CostModel, cfg: SolverConfig, grid: Grid, mode: SolveMode,
           start: GridDistribution, on_iterate: Optional[IterateCallback]) -> Tuple[GridDistribution, KKTReport]:
    method = _resolve_method(spec, cfg)
    if method == SolverMethod.LEVEL_SWEEP:
        F, report = _level_sweep(spec, cost, grid, mode, cfg)
        if on_iterate is not None:
            on_iterate(report.iterations, F, report)
    elif method == SolverMethod.MIRROR_PROX:
        F, report = _mirror_prox(spec, cost, start, mode, cfg, on_iterate)
    else:
        F, report = _damped_best_response(spec, cost, start, mode, cfg, on_iterate)
    report.method = method.value
    return F, report


@track_solve("equilibrium")
def solve_symmetric_equilibrium(spec: PrizeSpec, cost: CostModel, cfg: Optional[SolverConfig] = None,
                                grid: Optional[Grid] = None, start: Optional[GridDistribution] = None,
                                on_iterate: Optional[IterateCallback] = None) -> Tuple[GridDistribution, KKTReport]:
    """
    Compute a symmetric equilibrium and its KKT certificate.

    Args:
        spec: Prize rule
        cost: Cost functional
        cfg: Solver configuration (method, damping, tolerances, start, mean constraint)
        grid: Grid of the strategy space (default: GRID_SIZE uniform points)
        start: Start distribution when cfg.start is 'given'
        on_iterate: Called with (iteration, distribution, report) after every certificate

    Returns:
        Tuple of the distribution and its KKTReport

    Raises:
        NoConvergence: If the certificate misses kkt_tol; carries the best iterate and its report
    """
    cfg = cfg or SolverConfig()
    grid = grid or (start.grid if start is not None else Grid.uniform())
    try:
        F, report = _solve(spec, cost, cfg, grid, SolveMode.GAME, start_distribution(grid, cfg, start), on_iterate)
    except NoConvergence:
        raise
    except Exception as e:
        logger.error(f"Equilibrium solve failed: {str(e)}")
        raise

    record_certificate("equilibrium", report)
    if not report.converged:
        logger.warning(f"Equilibrium not certified: sup {report.sup_violation:.3e}, gap {report.comp_gap:.3e}")
        raise NoConvergence(
            f"equilibrium certificate above kkt_tol = {cfg.kkt_tol} "
            f"(sup_violation {report.sup_violation:.3e}, comp_gap {report.comp_gap:.3e})",
            result=F, report=report,
        )
    logger.info(f"Equilibrium ({report.method}): lambda = {report.lambda_:.6g}, "
                f"sup_violation = {report.sup_violation:.3e}, comp_gap = {report.comp_gap:.3e}")
    return F, report


@track_solve("planner")
def solve_planner(spec: PrizeSpec, cost: CostModel, cfg: Optional[SolverConfig] = None, restarts: int = 1,
                  grid: Optional[Grid] = None, start: Optional[GridDistribution] = None,
                  on_iterate: Optional[IterateCallback] = None) -> Tuple[GridDistribution, KKTReport]:
    """
    Maximize v(F) = E[Pi]/n - C(F) by multistart ascent on A_F - c_F.

    The first candidate starts from cfg.start; each further restart runs
    mirror_prox from a Dirichlet draw seeded by cfg.seed + restart. The
    certified candidate with the largest objective wins; stationarity, not
    global optimality, is certified.

    Raises:
        NoConvergence: If no candidate is certified
    """
    cfg = cfg or SolverConfig()
    if int(restarts) < 1:
        raise InvalidInput(f"restarts must be >= 1, got {restarts}")
    grid = grid or (start.grid if start is not None else Grid.uniform())

    candidates: List[Tuple[GridDistribution, KKTReport, float]] = []
    F, report = _solve(spec, cost, cfg, grid, SolveMode.PLANNER, start_distribution(grid, cfg, start), on_iterate)
    candidates.append((F, report, planner_objective(spec, cost, F, cfg)))

    restart_cfg = cfg.model_copy(update={"method": SolverMethod.MIRROR_PROX})
    for r in range(1, int(restarts)):
        rng = np.random.default_rng(cfg.seed + r)
        random_start = GridDistribution.from_weights(grid, rng.dirichlet(np.ones(grid.size)))
        random_start = start_distribution(grid, restart_cfg, random_start)
        F_r, report_r = _solve(spec, cost, restart_cfg, grid, SolveMode.PLANNER, random_start, on_iterate)
        candidates.append((F_r, report_r, planner_objective(spec, cost, F_r, cfg)))

    certified = [c for c in candidates if c[1].converged]
    pool = certified or candidates
    F, report, value = max(pool, key=lambda c: c[2])
    record_certificate("planner", report)
    if not certified:
        logger.warning(f"Planner not certified after {restarts} start(s): sup {report.sup_violation:.3e}")
        raise NoConvergence(f"planner certificate above kkt_tol = {cfg.kkt_tol}", result=F, report=report)
    logger.info(f"Planner ({report.method}): lambda = {report.lambda_:.6g}, objective = {value:.6g}, "
                f"{len(certified)}/{len(candidates)} starts certified")
    return F, report
