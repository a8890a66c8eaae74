"""
Convex cost functionals represented by their Gateaux-derivative kernels.

A CostModel knows c_F(x) for every grid distribution F. The cost level C(F) is
defined by integrating the kernel along the straight segment from a reference
distribution (the point mass at 0 unless stated otherwise), so every quantity
the equilibrium conditions use is exact and C only needs internal consistency.
"""
from dataclasses import dataclass, field
from typing import Any, Callable, Dict, List, Optional, Sequence, Union
import logging

import numpy as np
from scipy.special import roots_legendre

from ..core.config import settings
from ..core.validation import InvalidInput, NumericalFailure, check_positive
from ..models.schemas import CostKind, CostSpec
from .functions import build_bivariate, build_function
from .gridmeasure import Grid, GridDistribution, t_of_x

logger = logging.getLogger(__name__)

# Finite horizon for the strict-positivity check of tail kernels; beyond it
# kappa - c_inf underflows against c_inf in double precision.
TAIL_POSITIVITY_HORIZON = 10.0
TAIL_HORIZONS = (10.0, 20.0, 40.0)
TAIL_GAP_LIMIT = 1e-6


@dataclass(frozen=True)
class CostModel:
    """Cost functional of one of four kinds.

    Linear uses c(x); Separable uses gamma(x) + beta(F(x)); Local uses
    kappa(x, F(x)); TailLocal uses kappa(t, H(t)) in the time coordinate
    t = (1 - x)/x, with H the time cdf and c_inf the marginal cost at t = infinity.
    """

    kind: CostKind
    c: Optional[Callable] = None
    gamma: Optional[Callable] = None
    beta: Optional[Callable] = None
    kappa: Optional[Callable] = None
    c_inf: float = 0.0
    quadrature_steps: int = field(default_factory=lambda: settings.QUADRATURE_STEPS)
    steepness: Optional[float] = None
    label: str = ""

    def __post_init__(self):
        needed = {
            CostKind.LINEAR: ("c",),
            CostKind.SEPARABLE: ("gamma", "beta"),
            CostKind.LOCAL: ("kappa",),
            CostKind.TAIL_LOCAL: ("kappa",),
        }[CostKind(self.kind)]
        for name in needed:
            if getattr(self, name) is None:
                raise InvalidInput(f"{self.kind} cost requires '{name}'")
        if int(self.quadrature_steps) < 1:
            raise InvalidInput(f"quadrature_steps must be >= 1, got {self.quadrature_steps}")
        if self.steepness is not None:
            check_positive(self.steepness, "steepness")
        self._check_kind_invariants()

    # Constructors

    @classmethod
    def linear(cls, c: Callable, **kwargs) -> "CostModel":
        return cls(CostKind.LINEAR, c=c, **kwargs)

    @classmethod
    def separable(cls, gamma: Callable, beta: Callable, **kwargs) -> "CostModel":
        return cls(CostKind.SEPARABLE, gamma=gamma, beta=beta, **kwargs)

    @classmethod
    def local(cls, kappa: Callable, **kwargs) -> "CostModel":
        return cls(CostKind.LOCAL, kappa=kappa, **kwargs)

    @classmethod
    def tail_local(cls, kappa: Callable, c_inf: float, **kwargs) -> "CostModel":
        return cls(CostKind.TAIL_LOCAL, kappa=kappa, c_inf=float(c_inf), **kwargs)

    @classmethod
    def from_spec(cls, spec: Union[CostSpec, Dict[str, Any]]) -> "CostModel":
        if isinstance(spec, dict):
            spec = CostSpec.model_validate(spec)
        common = {"quadrature_steps": spec.quadrature_steps, "steepness": spec.steepness, "label": spec.kind.value}
        if spec.kind == CostKind.LINEAR:
            return cls.linear(build_function(spec.c), **common)
        if spec.kind == CostKind.SEPARABLE:
            return cls.separable(build_function(spec.gamma), build_function(spec.beta), **common)
        if spec.kind == CostKind.LOCAL:
            return cls.local(build_bivariate(spec.kappa), **common)
        return cls.tail_local(build_bivariate(spec.kappa), spec.c_inf, **common)

    def _check_kind_invariants(self) -> None:
        xs = np.linspace(0.0, 1.0, 1001)
        kind = CostKind(self.kind)

        if kind == CostKind.LINEAR:
            fine_xs = np.linspace(0.0, 1.0, 2001)
            values = np.broadcast_to(np.asarray(self.c(xs), dtype=float), xs.shape)
            coarse = np.max(np.abs(np.diff(values)))
            fine = np.max(np.abs(np.diff(np.broadcast_to(np.asarray(self.c(fine_xs), dtype=float), fine_xs.shape))))
            if not np.all(np.isfinite(values)):
                raise InvalidInput("linear kernel c must be finite on [0, 1]")
            if fine > 0.75 * coarse + 1e-12:
                raise InvalidInput("linear kernel c is not continuous on [0, 1] (jumps persist under refinement)")

        elif kind == CostKind.SEPARABLE:
            g = np.broadcast_to(np.asarray(self.gamma(xs), dtype=float), xs.shape)
            b = np.broadcast_to(np.asarray(self.beta(xs), dtype=float), xs.shape)
            if abs(g[0]) > 1e-12:
                raise InvalidInput(f"separable cost needs gamma(0) = 0, got {g[0]}")
            if np.any(np.diff(g) <= 0.0):
                raise InvalidInput("separable cost needs gamma strictly increasing")
            if np.any(np.diff(g, 2) > 1e-9):
                raise InvalidInput("separable cost needs gamma concave")
            if abs(b[0]) > 1e-12:
                raise InvalidInput(f"separable cost needs beta(0) = 0, got {b[0]}")
            if np.any(np.diff(b) < -1e-12):
                raise InvalidInput("separable cost needs beta nondecreasing")

        elif kind == CostKind.LOCAL:
            X, Q = np.meshgrid(np.linspace(0.0, 1.0, 101), np.linspace(0.0, 1.0, 101), indexing="ij")
            K = np.asarray(self.kappa(X, Q), dtype=float)
            if np.any(np.diff(K, axis=1) < -1e-12):
                raise InvalidInput("local cost needs kappa nondecreasing in q")
            if np.any(np.diff(K, axis=0) <= 0.0):
                raise InvalidInput("local cost needs kappa strictly increasing in x")

        else:
            ts = np.linspace(0.0, TAIL_POSITIVITY_HORIZON, 201)
            T, Q = np.meshgrid(ts, np.linspace(0.0, 1.0, 51), indexing="ij")
            K = np.asarray(self.kappa(T, Q), dtype=float)
            if np.any(K <= self.c_inf):
                raise InvalidInput(f"tail-local cost needs kappa(t, q) > c_inf = {self.c_inf} at finite t")
            gap = tail_gap(self, TAIL_HORIZONS[-1])
            if gap > TAIL_GAP_LIMIT:
                raise InvalidInput(f"tail-local kappa does not approach c_inf (gap {gap:.3e} at t >= {TAIL_HORIZONS[-1]:g})")


@dataclass(frozen=True)
class CostReport:
    value: float
    kernel_samples: np.ndarray
    c3_margin: float


@dataclass
class CostValidation:
    """Outcome of sampled assumption checks; violations are listed in detection order."""

    passed: bool
    violations: List[str]
    reports: List[CostReport]
    min_c3_margin: float
    max_convexity_violation: float
    min_fd_slope: Optional[float]
    tail_gaps: Dict[float, float] = field(default_factory=dict)

    @property
    def first_violation(self) -> Optional[str]:
        return self.violations[0] if self.violations else None

    def to_dict(self) -> Dict[str, Any]:
        return {
            "passed": self.passed,
            "violations": self.violations,
            "min_c3_margin": self.min_c3_margin,
            "max_convexity_violation": self.max_convexity_violation,
            "min_fd_slope": self.min_fd_slope,
            "tail_gaps": {str(k): v for k, v in self.tail_gaps.items()},
        }


def kernel(model: CostModel, grid: Grid, weights: np.ndarray) -> np.ndarray:
    """c_F on the grid for a batch of weight vectors of shape (..., M)."""
    w = np.asarray(weights, dtype=float)
    x = grid.points
    kind = CostKind(model.kind)
    if kind == CostKind.LINEAR:
        return np.broadcast_to(np.asarray(model.c(x), dtype=float), w.shape).copy()
    cdf = np.clip(np.cumsum(w, axis=-1), 0.0, 1.0)
    if kind == CostKind.SEPARABLE:
        return np.asarray(model.gamma(x), dtype=float) + np.asarray(model.beta(cdf), dtype=float)
    if kind == CostKind.LOCAL:
        return np.asarray(model.kappa(x, cdf), dtype=float)

    # Time cdf at t(x_i) is the mass at or above x_i.
    time_cdf = np.clip(1.0 - (cdf - w), 0.0, 1.0)
    t = t_of_x(x)
    finite_t = np.where(np.isinf(t), 0.0, t)
    values = np.asarray(model.kappa(finite_t, time_cdf), dtype=float)
    return np.where(np.isinf(t), model.c_inf, values)


def marginal(model: CostModel, F: GridDistribution, x: float) -> float:
    """c_F(x) at a grid point x."""
    idx = F.grid.index_of(x)
    return float(kernel(model, F.grid, F.weights)[idx])


def _segment_integral(model: CostModel, grid: Grid, start: np.ndarray, end: np.ndarray,
                      upto: np.ndarray, steps: int) -> np.ndarray:
    """Integral over u in [0, upto] of sum_x c_{F_u}(x)·(end - start)(x), F_u = (1-u)start + u·end."""
    nodes, node_weights = roots_legendre(steps)
    upto = np.atleast_1d(np.asarray(upto, dtype=float))
    u = 0.5 * (nodes[None, :] + 1.0) * upto[:, None]
    direction = end - start
    batch = start[None, None, :] + u[..., None] * direction[None, None, :]
    K = kernel(model, grid, batch)
    integrand = K @ direction
    return 0.5 * upto * (integrand @ node_weights)


def segment_value(model: CostModel, F: GridDistribution, G: GridDistribution, s) -> np.ndarray:
    """C((1-s)F + sG) - C(F) measured along the segment from F, for one or more s."""
    if F.grid != G.grid:
        raise InvalidInput("distributions live on different grids")
    s = np.atleast_1d(np.asarray(s, dtype=float))
    if CostKind(model.kind) == CostKind.LINEAR:
        c = kernel(model, F.grid, F.weights)
        return s * float(np.dot(c, G.weights - F.weights))
    coarse = _segment_integral(model, F.grid, F.weights, G.weights, s, int(model.quadrature_steps))
    fine = _segment_integral(model, F.grid, F.weights, G.weights, s, 2 * int(model.quadrature_steps))
    error = float(np.max(np.abs(fine - coarse)))
    if error > settings.QUADRATURE_FAILURE_TOL:
        raise NumericalFailure(f"segment quadrature did not stabilize (refinement difference {error:.3e})")
    return fine


def evaluate(model: CostModel, F: GridDistribution, F0: Optional[GridDistribution] = None) -> float:
    """C(F) - C(F0) by line integration of the kernel along the segment from F0 to F.

    F0 defaults to the point mass at 0, whose cost is normalized to zero.

    Raises:
        NumericalFailure: If the doubled-resolution quadrature differs by more than 1e-6
    """
    if F0 is None:
        F0 = GridDistribution.point_mass(F.grid, 0.0)
    return float(segment_value(model, F0, F, 1.0)[0])


def c3_margin(model: CostModel, F: GridDistribution, pi_bar: float) -> float:
    """c_F(1) - c_F(0) - pi_bar."""
    c = kernel(model, F.grid, F.weights)
    return float(c[-1] - c[0] - pi_bar)


def finite_difference_check(model: CostModel, F: GridDistribution, G: GridDistribution,
                            eps_list: Sequence[float] = (1e-2, 1e-3, 1e-4)) -> Dict[str, Any]:
    """Compare difference quotients of C along F -> G with the kernel pairing.

    Returns the errors per epsilon and the fitted log-log slope; the slope is None
    when every error sits at rounding level (exact directional derivative).
    """
    eps = np.asarray(eps_list, dtype=float)
    derivative = float(np.dot(kernel(model, F.grid, F.weights), G.weights - F.weights))
    quotients = segment_value(model, F, G, eps) / eps
    errors = np.abs(quotients - derivative)
    floor = 1e-12 * max(1.0, abs(derivative))
    if np.all(errors <= floor):
        return {"errors": errors.tolist(), "slope": None, "passed": True}
    usable = errors > floor
    if usable.sum() < 2:
        return {"errors": errors.tolist(), "slope": None, "passed": True}
    slope = float(np.polyfit(np.log(eps[usable]), np.log(errors[usable]), 1)[0])
    return {"errors": errors.tolist(), "slope": slope, "passed": slope >= 0.9}


def segment_convexity(model: CostModel, F: GridDistribution, G: GridDistribution, points: int = 11) -> float:
    """Most negative second difference of s -> C((1-s)F + sG); zero or positive means convex on the sample."""
    s = np.linspace(0.0, 1.0, points)
    values = segment_value(model, F, G, s)
    second = np.diff(values, 2)
    return float(min(0.0, second.min()))


def tail_gap(model: CostModel, horizon: float, q_samples: int = 101) -> float:
    """sup over t >= horizon and sampled time-cdf values q of |kappa(t, q) - c_inf|."""
    if CostKind(model.kind) != CostKind.TAIL_LOCAL:
        raise InvalidInput("tail_gap applies to tail-local costs only")
    ts = horizon * np.array([1.0, 1.5, 2.0, 4.0, 8.0, 16.0])
    T, Q = np.meshgrid(ts, np.linspace(0.0, 1.0, q_samples), indexing="ij")
    return float(np.max(np.abs(np.asarray(model.kappa(T, Q), dtype=float) - model.c_inf)))


def _sample_distributions(grid: Grid, rng: np.random.Generator, count: int) -> List[GridDistribution]:
    """Random Dirichlet draws mixed with adversarial extremes (point masses at the ends and two-point laws)."""
    extremes = [
        GridDistribution.point_mass(grid, 0.0),
        GridDistribution.point_mass(grid, 1.0),
        GridDistribution.from_weights(grid, np.eye(grid.size)[0] + np.eye(grid.size)[-1]),
    ]
    samples = []
    for _ in range(count):
        concentration = rng.choice([0.2, 1.0, 5.0])
        samples.append(GridDistribution.from_weights(grid, rng.dirichlet(np.full(grid.size, concentration))))
    for position, extreme in zip((1, 3, 5), extremes):
        if position < count:
            samples[position] = extreme
    return samples


def validate(model: CostModel, pi_bar: float, eta1: float, trial_count: int, seed: int,
             grid: Optional[Grid] = None) -> CostValidation:
    """Sampled checks of the margin condition, midpoint convexity and Gateaux consistency.

    Args:
        model: Cost to check
        pi_bar: Prize bound entering the margin c_F(1) - c_F(0) - pi_bar
        eta1: Required margin
        trial_count: Number of sampled (F, G) pairs
        seed: Seed of the sampling generator
        grid: Grid of the sampled distributions (default: 51 uniform points)

    Returns:
        CostValidation whose violations name each failed assumption once
    """
    if int(trial_count) < 1:
        raise InvalidInput(f"trial_count must be >= 1, got {trial_count}")
    grid = grid or Grid.uniform(51)
    rng = np.random.default_rng(seed)
    Fs = _sample_distributions(grid, rng, trial_count)
    Gs = _sample_distributions(grid, rng, trial_count)[::-1]

    violations: List[str] = []
    reports: List[CostReport] = []
    margins, convexity, slopes = [], [], []
    fd_failed = False

    for F, G in zip(Fs, Gs):
        samples = kernel(model, grid, F.weights)
        margin = c3_margin(model, F, pi_bar)
        reports.append(CostReport(value=evaluate(model, F), kernel_samples=samples, c3_margin=margin))
        margins.append(margin)

        half, whole = segment_value(model, F, G, [0.5, 1.0])
        convexity.append(max(0.0, half - 0.5 * whole))

        fd = finite_difference_check(model, F, G)
        if fd["slope"] is not None:
            slopes.append(fd["slope"])
        fd_failed = fd_failed or not fd["passed"]

    min_margin = float(min(margins))
    if min_margin < eta1:
        violations.append(f"margin: c_F(1) - c_F(0) - pi_bar = {min_margin:.6g} < eta1 = {eta1:g}")
    max_convexity = float(max(convexity))
    if max_convexity > 1e-8:
        violations.append(f"convexity: midpoint convexity violated by {max_convexity:.3e}")
    if fd_failed:
        violations.append(f"gateaux: finite-difference slope below 0.9 (min {min(slopes):.3f})")

    tail_gaps: Dict[float, float] = {}
    if CostKind(model.kind) == CostKind.TAIL_LOCAL:
        tail_gaps = {T: tail_gap(model, T) for T in TAIL_HORIZONS}
        gaps = list(tail_gaps.values())
        if any(b > a + 1e-15 for a, b in zip(gaps, gaps[1:])) or gaps[-1] > TAIL_GAP_LIMIT:
            violations.append(f"tail: kappa does not approach c_inf (gaps {gaps})")

    result = CostValidation(
        passed=not violations,
        violations=violations,
        reports=reports,
        min_c3_margin=min_margin,
        max_convexity_violation=max_convexity,
        min_fd_slope=float(min(slopes)) if slopes else None,
        tail_gaps=tail_gaps,
    )
    if violations:
        logger.info(f"Cost validation failed: {violations[0]}")
    else:
        logger.debug(f"Cost validation passed over {trial_count} trials (min margin {min_margin:.4g})")
    return result
