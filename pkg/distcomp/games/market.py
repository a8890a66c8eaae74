"""
Price-and-quality oligopoly with taste-shock smoothing.

Each firm chooses a quality distribution F and a price p. A consumer buys from
the firm with the highest (1 - sigma) Q + sigma e - price, e an independent
taste shock with density g on [0, 1]. The smoothed quality Q-hat has an
absolutely continuous law, so a price first-order condition exists. Symmetric
equilibria alternate a distributional equilibrium at fixed p with the price
condition p = 1 / (n E[f-hat(Q-bar)]).
"""
import asyncio
from dataclasses import dataclass, field, replace
from typing import Any, Dict, List, Optional, Sequence, Tuple
import logging

import numpy as np
import pandas as pd
from scipy.special import roots_legendre

from ..core.config import settings
from ..core.metrics import track_solve
from ..core.validation import AssumptionViolated, InvalidInput, NoConvergence, NumericalFailure
from ..models.schemas import SolverConfig, TasteModel
from .costfun import CostModel, kernel
from .eqsolver import (
    KKTReport,
    best_response,
    kkt_residual,
    response_gain,
    solve_symmetric_equilibrium,
    start_distribution,
)
from .gridmeasure import Grid, GridDistribution
from .prizes import PrizeSpec

logger = logging.getLogger(__name__)

OUTER_ITER = 100


@dataclass(frozen=True)
class TasteDensity:
    """Taste-shock density on [0, 1]: uniform, or piecewise linear through tabulated knots."""

    knots: np.ndarray
    values: np.ndarray
    uniform: bool = False

    @classmethod
    def uniform_density(cls) -> "TasteDensity":
        return cls(np.array([0.0, 1.0]), np.array([1.0, 1.0]), uniform=True)

    @classmethod
    def tabulated(cls, knots: Sequence[float], values: Sequence[float]) -> "TasteDensity":
        k = np.asarray(knots, dtype=float)
        v = np.asarray(values, dtype=float)
        if k.size < 2 or k.size != v.size:
            raise InvalidInput("taste table needs matching knots and values, at least 2 of each")
        if k[0] != 0.0 or k[-1] != 1.0 or np.any(np.diff(k) <= 0.0):
            raise InvalidInput("taste knots must increase strictly from 0 to 1")
        if np.any(v < 0.0):
            raise InvalidInput("taste density must be nonnegative")
        total = float(np.sum(0.5 * (v[1:] + v[:-1]) * np.diff(k)))
        if abs(total - 1.0) > 1e-8:
            raise InvalidInput(f"taste density integrates to {total:.10g}, not 1")
        return cls(k, v)

    @classmethod
    def from_model(cls, model: TasteModel) -> "TasteDensity":
        if model.kind == "uniform":
            return cls.uniform_density()
        if model.knots is None or model.values is None:
            raise InvalidInput("tabulated taste needs 'knots' and 'values'")
        return cls.tabulated(model.knots, model.values)

    def pdf(self, e) -> np.ndarray:
        e = np.asarray(e, dtype=float)
        return np.where((e >= 0.0) & (e <= 1.0), np.interp(e, self.knots, self.values), 0.0)

    def cdf(self, e) -> np.ndarray:
        """Exact integral of the piecewise-linear density."""
        e = np.clip(np.asarray(e, dtype=float), 0.0, 1.0)
        if self.uniform:
            return e
        k, v = self.knots, self.values
        cumulative = np.concatenate(([0.0], np.cumsum(0.5 * (v[1:] + v[:-1]) * np.diff(k))))
        j = np.clip(np.searchsorted(k, e, side="right") - 1, 0, k.size - 2)
        d = e - k[j]
        slope = (v[j + 1] - v[j]) / (k[j + 1] - k[j])
        return np.clip(cumulative[j] + v[j] * d + 0.5 * slope * d * d, 0.0, 1.0)

    def nodes(self, per_segment: Optional[int] = None) -> Tuple[np.ndarray, np.ndarray]:
        """Composite Gauss-Legendre nodes on [0, 1] weighted by the density, normalized to total one."""
        per_segment = settings.TASTE_NODES if per_segment is None else int(per_segment)
        roots, weights = roots_legendre(per_segment)
        points, masses = [], []
        for a, b in zip(self.knots[:-1], self.knots[1:]):
            e = a + 0.5 * (roots + 1.0) * (b - a)
            points.append(e)
            masses.append(0.5 * (b - a) * weights * self.pdf(e))
        e = np.concatenate(points)
        m = np.concatenate(masses)
        return e, m / m.sum()


@dataclass(frozen=True)
class SmoothedQuality:
    """Law of Q-hat as a piecewise-linear cdf on a refined z-grid.

    f_hat holds the cell densities, so its mass is exactly one.
    """

    z: np.ndarray
    F_hat: np.ndarray
    f_hat: np.ndarray

    @property
    def step(self) -> float:
        return float(self.z[1] - self.z[0])

    def cdf(self, z) -> np.ndarray:
        z = np.asarray(z, dtype=float)
        return np.where(z <= 0.0, 0.0, np.where(z >= 1.0, 1.0, np.interp(z, self.z, self.F_hat)))

    def power_integral(self, z, k: int) -> np.ndarray:
        """P(z) = integral of F_hat^k from 0 to z, exact for the piecewise-linear cdf."""
        z = np.asarray(z, dtype=float)
        Fk = self.F_hat
        cell = np.where(self.f_hat > 0.0,
                        (np.power(Fk[1:], k + 1) - np.power(Fk[:-1], k + 1)) / ((k + 1) * np.where(self.f_hat > 0.0, self.f_hat, 1.0)),
                        np.power(Fk[:-1], k) * self.step)
        cumulative = np.concatenate(([0.0], np.cumsum(cell)))
        inside = np.clip(z, 0.0, 1.0)
        j = np.clip(np.searchsorted(self.z, inside, side="right") - 1, 0, self.z.size - 2)
        start = Fk[j]
        here = start + self.f_hat[j] * (inside - self.z[j])
        partial = np.where(self.f_hat[j] > 0.0,
                           (np.power(here, k + 1) - np.power(start, k + 1)) / ((k + 1) * np.where(self.f_hat[j] > 0.0, self.f_hat[j], 1.0)),
                           np.power(start, k) * (inside - self.z[j]))
        value = cumulative[j] + partial
        return np.where(z <= 0.0, 0.0, value + np.maximum(z - 1.0, 0.0))


def convolve_hat(F: GridDistribution, sigma: float, taste: TasteDensity,
                 refinement: Optional[int] = None) -> SmoothedQuality:
    """
    Law of Q-hat = (1 - sigma) Q + sigma e for Q ~ F.

    F_hat(z) = sum_x dF(x) G((z - (1 - sigma) x) / sigma) at the nodes of a grid
    refinement times finer than F's; f_hat is the cell-averaged density.
    """
    if not 0.0 < sigma < 1.0:
        raise InvalidInput(f"sigma must lie strictly inside (0, 1), got {sigma}")
    refinement = settings.CONVOLUTION_REFINEMENT if refinement is None else int(refinement)
    if refinement < 1:
        raise InvalidInput(f"refinement must be >= 1, got {refinement}")
    z = np.linspace(0.0, 1.0, (F.grid.size - 1) * refinement + 1)
    shifted = (z[:, None] - (1.0 - sigma) * F.points[None, :]) / sigma
    F_hat = taste.cdf(shifted) @ F.weights
    F_hat = np.maximum.accumulate(np.clip(F_hat, 0.0, 1.0))
    F_hat[0], F_hat[-1] = 0.0, 1.0
    f_hat = np.diff(F_hat) / np.diff(z)
    return SmoothedQuality(z=z, F_hat=F_hat, f_hat=f_hat)


def omega_values(q, smoothed: SmoothedQuality, sigma: float, taste: TasteDensity, n: int,
                 r_shift: float = 0.0) -> np.ndarray:
    """Win probability of quality q against n - 1 smoothed opponents, price advantage r_shift."""
    q = np.asarray(q, dtype=float)
    base = (1.0 - sigma) * q + r_shift
    if taste.uniform:
        upper = smoothed.power_integral(base + sigma, n - 1)
        lower = smoothed.power_integral(base, n - 1)
        return np.clip((upper - lower) / sigma, 0.0, 1.0)
    e, mass = taste.nodes()
    values = np.power(smoothed.cdf(base[..., None] + sigma * e), n - 1)
    return np.clip(values @ mass, 0.0, 1.0)


def omega(q: float, smoothed: SmoothedQuality, sigma: float, taste: TasteDensity, n: int,
          r_shift: float = 0.0) -> float:
    """omega(q) = integral of F_hat((1 - sigma) q + sigma e + r_shift)^(n-1) dG(e)."""
    return float(omega_values(np.array(q), smoothed, sigma, taste, n, r_shift))


def price_foc(smoothed: SmoothedQuality, n: int) -> float:
    """
    p = 1 / (n E[f_hat(Q-bar)]) with E[f_hat(Q-bar)] = (n - 1) integral of F_hat^(n-2) f_hat^2.

    Raises:
        NumericalFailure: If the density integral is below 1e-12
    """
    n = int(n)
    if n < 2:
        raise InvalidInput(f"n must be >= 2, got {n}")
    # Per cell the cdf is linear with slope f, so f^2 F^(n-2) integrates to f (F1^(n-1) - F0^(n-1)) / (n-1).
    expected_density = float(np.sum(smoothed.f_hat * np.diff(np.power(smoothed.F_hat, n - 1))))
    if expected_density < 1e-12:
        raise NumericalFailure(f"density integral {expected_density:.3e} too small for a price condition")
    return 1.0 / (n * expected_density)


@dataclass(frozen=True)
class MarketSpec:
    n: int
    sigma: float
    taste: TasteDensity
    cost: CostModel
    grid: Grid
    p_max: float = field(default_factory=lambda: settings.P_MAX)
    refinement: int = field(default_factory=lambda: settings.CONVOLUTION_REFINEMENT)

    def __post_init__(self):
        if int(self.n) < 2:
            raise InvalidInput(f"n must be >= 2, got {self.n}")
        if not 0.0 < self.sigma < 1.0:
            raise InvalidInput(f"sigma must lie strictly inside (0, 1), got {self.sigma}")
        if self.p_max <= 0.0:
            raise InvalidInput(f"p_max must be > 0, got {self.p_max}")

    def smooth(self, F: GridDistribution) -> SmoothedQuality:
        return convolve_hat(F, self.sigma, self.taste, self.refinement)

    def interim(self, weights: np.ndarray, price: float, r_shift: float = 0.0) -> np.ndarray:
        """price * omega on the quality grid for a batch of weight vectors (..., M)."""
        w = np.asarray(weights, dtype=float)
        flat = w.reshape(-1, w.shape[-1])
        out = np.empty_like(flat)
        for row in range(flat.shape[0]):
            F = GridDistribution.from_weights(self.grid, flat[row])
            out[row] = price * omega_values(self.grid.points, self.smooth(F), self.sigma, self.taste,
                                            self.n, r_shift)
        return out.reshape(w.shape)

    def prize(self, price: float, r_shift: float = 0.0) -> PrizeSpec:
        """Custom prize whose interim oracle is the deviator's expected revenue at price."""
        return PrizeSpec.custom(
            self.n,
            interim=lambda points, weights: self.interim(weights, price, r_shift),
            pi_bar=float(price),
        )


def win_probability_total(F: GridDistribution, spec: MarketSpec) -> float:
    """n times the win probability of one firm at the symmetric profile; one up to discretization."""
    smoothed = spec.smooth(F)
    values = omega_values(F.points, smoothed, spec.sigma, spec.taste, spec.n)
    return float(spec.n * np.dot(values, F.weights))


@dataclass
class MarketEquilibrium:
    F: GridDistribution
    smoothed: SmoothedQuality
    p: float
    lambda_g: float
    kkt: KKTReport
    omega_gap: float
    cost_gap: float
    support_span: Tuple[float, float]
    price_dev_gap: float
    outer_iterations: int
    deviation_scan: pd.DataFrame

    @property
    def F_hat(self) -> np.ndarray:
        return self.smoothed.F_hat

    @property
    def f_hat(self) -> np.ndarray:
        return self.smoothed.f_hat

    @property
    def span(self) -> float:
        return self.support_span[1] - self.support_span[0]

    def to_dict(self) -> Dict[str, Any]:
        return {
            "p": self.p,
            "lambda_g": self.lambda_g,
            "omega_gap": self.omega_gap,
            "cost_gap": self.cost_gap,
            "q_lo": self.support_span[0],
            "q_hi": self.support_span[1],
            "price_dev_gap": self.price_dev_gap,
            "outer_iterations": self.outer_iterations,
            "kkt": self.kkt.to_dict(),
            "distribution": self.F.to_dict(),
            "F_hat": {"z": self.smoothed.z.tolist(), "cdf": self.smoothed.F_hat.tolist()},
        }


def price_deviation_scan(spec: MarketSpec, F: GridDistribution, p: float, cfg: SolverConfig,
                         points: Optional[int] = None) -> pd.DataFrame:
    """Gain of the best joint (distribution, price r) deviation over an r-grid on [0, p_max]."""
    points = settings.PRICE_SCAN_POINTS if points is None else int(points)
    x = spec.grid.points
    smoothed = spec.smooth(F)
    a_eq = p * omega_values(x, smoothed, spec.sigma, spec.taste, spec.n)
    rows = []
    for r in np.linspace(0.0, spec.p_max, points):
        a_r = r * omega_values(x, smoothed, spec.sigma, spec.taste, spec.n, r_shift=p - r)
        try:
            H = best_response(spec.prize(r, p - r), F, spec.cost, cfg, a=a_r)
        except NoConvergence as e:
            H = e.result
        gain = float(np.dot(a_r - a_eq, F.weights)) + response_gain(a_r, spec.cost, F, H)
        rows.append({"r": float(r), "gain": gain})
    return pd.DataFrame(rows)


def _check_interior(p: float, spec: MarketSpec, cfg: SolverConfig) -> None:
    if not cfg.kkt_tol < p < spec.p_max - cfg.kkt_tol:
        raise AssumptionViolated(f"price {p:.6g} left the interior of [0, p_max = {spec.p_max:g}]")


@track_solve("market")
def solve_market(spec: MarketSpec, cfg: Optional[SolverConfig] = None, scan_points: Optional[int] = None,
                 start: Optional[GridDistribution] = None) -> MarketEquilibrium:
    """
    Symmetric (F, p) equilibrium by alternating distributional equilibrium and price condition.

    Raises:
        AssumptionViolated: If the price leaves the interior of [0, p_max]
        NoConvergence: After OUTER_ITER alternations without a joint certificate
    """
    cfg = cfg or SolverConfig()
    F = start_distribution(spec.grid, cfg, start)
    p = price_foc(spec.smooth(F), spec.n)
    _check_interior(p, spec, cfg)

    report: Optional[KKTReport] = None
    outer = 0
    for outer in range(1, OUTER_ITER + 1):
        try:
            F_next, _ = solve_symmetric_equilibrium(spec.prize(p), spec.cost, cfg, grid=spec.grid, start=F)
        except NoConvergence as e:
            F_next = e.result
        F = F.mixture(F_next, cfg.damping) if outer > 1 else F_next
        p_next = price_foc(spec.smooth(F), spec.n)
        _check_interior(p_next, spec, cfg)
        report = kkt_residual(spec.prize(p_next), F, spec.cost, cfg=cfg)
        logger.debug(f"market outer {outer}: p {p:.6g} -> {p_next:.6g}, sup {report.sup_violation:.3e}")
        settled = abs(p_next - p) <= cfg.kkt_tol * p
        p = p_next
        if report.converged and settled:
            break
    else:
        raise NoConvergence(f"market did not settle in {OUTER_ITER} alternations", result=F, report=report)

    smoothed = spec.smooth(F)
    support = F.support(cfg.support_eps)
    q_lo, q_hi = float(support.min()), float(support.max())
    c = kernel(spec.cost, spec.grid, F.weights)
    lo_idx, hi_idx = spec.grid.index_of(q_lo), spec.grid.index_of(q_hi)
    om = omega_values(np.array([q_lo, q_hi]), smoothed, spec.sigma, spec.taste, spec.n)
    scan = price_deviation_scan(spec, F, p, cfg, scan_points)
    equilibrium = MarketEquilibrium(
        F=F,
        smoothed=smoothed,
        p=p,
        lambda_g=report.lambda_,
        kkt=report,
        omega_gap=float(om[1] - om[0]),
        cost_gap=float(c[hi_idx] - c[lo_idx]),
        support_span=(q_lo, q_hi),
        price_dev_gap=max(0.0, float(scan["gain"].max())),
        outer_iterations=outer,
        deviation_scan=scan,
    )
    logger.info(f"Market n={spec.n}: p = {p:.6g}, cost gap {equilibrium.cost_gap:.4g}, "
                f"price deviation gap {equilibrium.price_dev_gap:.3e}")
    return equilibrium


@dataclass
class LimitSweep:
    table: pd.DataFrame
    equilibria: List[MarketEquilibrium]
    gap_bound_holds: bool
    steepness_holds: Optional[bool]
    prices_decrease: Optional[bool]

    def to_dict(self) -> Dict[str, Any]:
        return {
            "gap_bound_holds": self.gap_bound_holds,
            "steepness_holds": self.steepness_holds,
            "prices_decrease": self.prices_decrease,
            "rows": int(len(self.table)),
        }


async def limit_sweep(spec: MarketSpec, n_list: Sequence[int], cfg: Optional[SolverConfig] = None,
                      threads: int = 1, scan_points: Optional[int] = None) -> LimitSweep:
    """Solve the market for each n concurrently; rows come back ordered by n."""
    cfg = cfg or SolverConfig()
    n_list = [int(n) for n in n_list]
    if any(b <= a for a, b in zip(n_list, n_list[1:])):
        raise InvalidInput("n_list must be strictly ascending")
    semaphore = asyncio.Semaphore(max(1, int(threads)))

    async def solve_one(n: int) -> MarketEquilibrium:
        async with semaphore:
            return await asyncio.to_thread(solve_market, replace(spec, n=n), cfg, scan_points)

    equilibria = await asyncio.gather(*(solve_one(n) for n in n_list))

    tol = 10.0 * cfg.kkt_tol
    rows = []
    for n, eq in zip(n_list, equilibria):
        rows.append({
            "n": n,
            "p": eq.p,
            "lambda_g": eq.lambda_g,
            "cost_gap": eq.cost_gap,
            "q_lo": eq.support_span[0],
            "q_hi": eq.support_span[1],
            "kkt_sup": eq.kkt.sup_violation,
            "price_dev_gap": eq.price_dev_gap,
        })
    table = pd.DataFrame(rows, columns=["n", "p", "lambda_g", "cost_gap", "q_lo", "q_hi", "kkt_sup", "price_dev_gap"])

    gap_holds = bool(np.all(table["cost_gap"] <= table["p"] + tol))
    steep = None
    if spec.cost.steepness is not None:
        spans = table["q_hi"] - table["q_lo"]
        steep = bool(np.all(spans <= table["cost_gap"] / spec.cost.steepness + tol))
    decrease = bool(np.all(np.diff(table["p"].to_numpy()) < 0.0)) if len(table) > 1 else None
    return LimitSweep(table=table, equilibria=list(equilibria), gap_bound_holds=gap_holds,
                      steepness_holds=steep, prices_decrease=decrease)


def run_limit_sweep(spec: MarketSpec, n_list: Sequence[int], cfg: Optional[SolverConfig] = None,
                    threads: int = 1, scan_points: Optional[int] = None) -> LimitSweep:
    """Synchronous wrapper around limit_sweep."""
    return asyncio.run(limit_sweep(spec, n_list, cfg, threads, scan_points))
