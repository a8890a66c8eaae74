"""
Distributions on a finite ordered grid in [0, 1].

A GridDistribution is the strategy object of every game in the package: a
probability vector over the points of a Grid. The module also carries the
stochastic-order predicates (FOSD, convex, increasing convex), majorization of
prize vectors with its reverse Pigou-Dalton decomposition, and the Levy metric
used for refinement and agreement studies.
"""
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Dict, List, Optional, Sequence, Union
import logging

import numpy as np
import pandas as pd

from ..core.config import settings
from ..models.schemas import OrderRelation
from ..core.validation import (
    AssumptionViolated,
    InvalidInput,
    NumericalFailure,
    check_probability_vector,
    check_same_length,
    check_unit_interval,
)

logger = logging.getLogger(__name__)


@dataclass(frozen=True, eq=False)
class Grid:
    """Strictly increasing points in [0, 1] with both endpoints included."""

    points: np.ndarray

    def __post_init__(self):
        pts = np.array(self.points, dtype=float)
        if pts.ndim != 1 or pts.size < 2:
            raise InvalidInput(f"grid needs at least 2 points, got {pts.size}")
        if pts[0] != 0.0 or pts[-1] != 1.0:
            raise InvalidInput(f"grid must start at 0 and end at 1, got [{pts[0]}, {pts[-1]}]")
        if np.any(np.diff(pts) <= 0.0):
            raise InvalidInput("grid points must be strictly increasing")
        pts.setflags(write=False)
        object.__setattr__(self, "points", pts)

    @classmethod
    def uniform(cls, size: Optional[int] = None) -> "Grid":
        size = settings.GRID_SIZE if size is None else int(size)
        if size < 2:
            raise InvalidInput(f"grid size must be >= 2, got {size}")
        pts = np.linspace(0.0, 1.0, size)
        pts[0], pts[-1] = 0.0, 1.0
        return cls(pts)

    @property
    def size(self) -> int:
        return int(self.points.size)

    @property
    def max_step(self) -> float:
        return float(np.max(np.diff(self.points)))

    def index_of(self, x: float, tol: Optional[float] = None) -> int:
        """Index of the grid point equal to x within tol; InvalidInput when x is off-grid."""
        tol = settings.GRID_SNAP_TOL if tol is None else tol
        idx = int(np.clip(np.searchsorted(self.points, x), 0, self.size - 1))
        for candidate in (idx - 1, idx):
            if 0 <= candidate < self.size and abs(self.points[candidate] - x) <= tol:
                return candidate
        raise InvalidInput(f"x = {x} is not a grid point")

    def __eq__(self, other) -> bool:
        return isinstance(other, Grid) and np.array_equal(self.points, other.points)

    def __hash__(self) -> int:
        return hash(self.points.tobytes())

    def __len__(self) -> int:
        return self.size


@dataclass(frozen=True, eq=False)
class GridDistribution:
    """A probability measure on the points of a Grid."""

    grid: Grid
    weights: np.ndarray

    def __post_init__(self):
        w = np.array(self.weights, dtype=float)
        check_same_length(w, self.grid.points, "weights vs grid")
        w = check_probability_vector(w, "weights", atol=1e-12)
        w.setflags(write=False)
        object.__setattr__(self, "weights", w)

        cdf = np.minimum(np.cumsum(w), 1.0)
        cdf[-1] = 1.0
        cdf.setflags(write=False)
        object.__setattr__(self, "_cdf", cdf)

    # Constructors

    @classmethod
    def point_mass(cls, grid: Grid, x: float) -> "GridDistribution":
        w = np.zeros(grid.size)
        w[grid.index_of(x)] = 1.0
        return cls(grid, w)

    @classmethod
    def uniform(cls, grid: Grid) -> "GridDistribution":
        return cls(grid, np.full(grid.size, 1.0 / grid.size))

    @classmethod
    def from_cdf(cls, grid: Grid, cdf: Sequence[float]) -> "GridDistribution":
        """Difference cdf samples at the grid points into weights.

        Monotonicity violations up to rounding are repaired; the terminal value is set to one.
        """
        values = np.asarray(cdf, dtype=float)
        check_same_length(values, grid.points, "cdf vs grid")
        if np.any(np.diff(values) < -1e-9) or values.min() < -1e-9 or values.max() > 1.0 + 1e-9:
            raise InvalidInput("cdf samples must be nondecreasing within [0, 1]")
        values = np.maximum.accumulate(np.clip(values, 0.0, 1.0))
        values[-1] = 1.0
        w = np.diff(values, prepend=0.0)
        return cls(grid, w / w.sum())

    @classmethod
    def from_weights(cls, grid: Grid, weights: Sequence[float]) -> "GridDistribution":
        """Clip rounding negatives and renormalize before validating."""
        w = np.asarray(weights, dtype=float)
        if np.any(w < -1e-9):
            raise InvalidInput(f"weights must be nonnegative (min {w.min():.3e})")
        w = np.clip(w, 0.0, None)
        total = w.sum()
        if total <= 0.0:
            raise InvalidInput("weights carry no mass")
        return cls(grid, w / total)

    def mixture(self, other: "GridDistribution", s: float) -> "GridDistribution":
        """(1 - s)·self + s·other."""
        _require_same_grid(self, other)
        check_unit_interval(s, "mixture weight")
        return GridDistribution.from_weights(self.grid, (1.0 - s) * self.weights + s * other.weights)

    # Accessors

    @property
    def points(self) -> np.ndarray:
        return self.grid.points

    @property
    def cdf(self) -> np.ndarray:
        return self._cdf

    @property
    def cdf_left(self) -> np.ndarray:
        """Mass strictly below each grid point."""
        return np.concatenate(([0.0], self._cdf[:-1]))

    @property
    def cdf_mid(self) -> np.ndarray:
        """Mass below each point plus half its atom."""
        return self.cdf_left + 0.5 * self.weights

    @property
    def mean(self) -> float:
        return float(np.dot(self.points, self.weights))

    def expect(self, u: Callable[[np.ndarray], np.ndarray]) -> float:
        return float(np.dot(np.asarray(u(self.points), dtype=float), self.weights))

    def support(self, eps: Optional[float] = None) -> np.ndarray:
        eps = settings.SUPPORT_EPS if eps is None else eps
        return self.points[self.weights > eps]

    # Serialization

    def to_dict(self) -> Dict[str, List[float]]:
        return {"grid": self.points.tolist(), "weights": self.weights.tolist()}

    @classmethod
    def from_dict(cls, data: Dict[str, Sequence[float]]) -> "GridDistribution":
        try:
            return cls(Grid(np.asarray(data["grid"], dtype=float)), np.asarray(data["weights"], dtype=float))
        except KeyError as e:
            raise InvalidInput(f"distribution JSON is missing field {str(e)}")

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame({"x": self.points, "weight": self.weights})

    def to_csv(self, path: Union[str, Path]) -> None:
        self.to_frame().to_csv(path, index=False, float_format="%.17g")

    @classmethod
    def from_csv(cls, path: Union[str, Path]) -> "GridDistribution":
        frame = pd.read_csv(path)
        missing = {"x", "weight"} - set(frame.columns)
        if missing:
            raise InvalidInput(f"distribution CSV lacks columns {sorted(missing)}")
        return cls(Grid(frame["x"].to_numpy(dtype=float)), frame["weight"].to_numpy(dtype=float))


@dataclass(frozen=True, eq=False)
class PrizeVector:
    """Ordered rank prizes v1 >= ... >= vn = 0 summing to one."""

    v: np.ndarray

    def __post_init__(self):
        v = np.array(self.v, dtype=float)
        if v.ndim != 1 or v.size < 2:
            raise InvalidInput(f"prize vector needs n >= 2 entries, got {v.size}")
        if not np.all(np.isfinite(v)):
            raise InvalidInput("prize vector contains non-finite entries")
        if np.any(np.diff(v) > 1e-12):
            raise InvalidInput(f"prize vector must be nonincreasing (v1 >= ... >= vn), got {v.tolist()}")
        if abs(v[-1]) > 1e-12:
            raise InvalidInput(f"prize vector must end with vn = 0, got vn = {v[-1]}")
        if abs(v.sum() - 1.0) > 1e-12:
            raise InvalidInput(f"prize vector must sum to 1 within 1e-12, got sum = {v.sum():.15g}")
        v[-1] = 0.0
        v.setflags(write=False)
        object.__setattr__(self, "v", v)

    @classmethod
    def of(cls, values: Sequence[float]) -> "PrizeVector":
        return cls(np.asarray(values, dtype=float))

    @classmethod
    def winner_take_all(cls, n: int) -> "PrizeVector":
        v = np.zeros(int(n))
        v[0] = 1.0
        return cls(v)

    @classmethod
    def random(cls, n: int, rng: np.random.Generator) -> "PrizeVector":
        """Draw a valid prize vector: sorted Dirichlet shares on the first n - 1 ranks."""
        if n < 2:
            raise InvalidInput(f"n must be >= 2, got {n}")
        shares = np.sort(rng.dirichlet(np.ones(n - 1)))[::-1]
        v = np.append(shares, 0.0)
        v[0] += 1.0 - v.sum()
        return cls(v)

    @property
    def n(self) -> int:
        return int(self.v.size)

    @property
    def partial_sums(self) -> np.ndarray:
        return np.cumsum(self.v)

    def __len__(self) -> int:
        return self.n

    def __eq__(self, other) -> bool:
        return isinstance(other, PrizeVector) and np.array_equal(self.v, other.v)

    def __hash__(self) -> int:
        return hash(self.v.tobytes())


@dataclass(frozen=True)
class OrderVerdict:
    relation: OrderRelation
    witness: Optional[float]
    max_violation: float

    def __post_init__(self):
        if (self.witness is not None) != (self.relation == OrderRelation.INCOMPARABLE):
            raise InvalidInput("witness must be present exactly for incomparable verdicts")
        if self.max_violation < 0.0:
            raise InvalidInput("max_violation must be nonnegative")

    @property
    def dominates(self) -> bool:
        return self.relation == OrderRelation.DOMINATES

    def to_dict(self) -> Dict[str, object]:
        return {"relation": self.relation.value, "witness": self.witness, "max_violation": self.max_violation}


@dataclass(frozen=True)
class Transfer:
    """Move delta from rank j to the richer rank i < j (ranks are 1-indexed)."""

    i: int
    j: int
    delta: float

    def as_tuple(self):
        return (self.i, self.j, self.delta)


def _require_same_grid(F: GridDistribution, G: GridDistribution) -> None:
    if F.grid != G.grid:
        raise InvalidInput("distributions live on different grids")


def _verdict(diff: np.ndarray, tol: float, locations: np.ndarray) -> OrderVerdict:
    """Classify a difference profile.

    The first object dominates when diff >= -tol everywhere, the second when
    diff <= tol everywhere. Equality within tol in both directions reports equal.
    """
    lowest = float(np.min(diff))
    highest = float(np.max(diff))
    first = lowest >= -tol
    second = highest <= tol
    if first and second:
        return OrderVerdict(OrderRelation.EQUAL, None, max(abs(lowest), abs(highest)))
    if first:
        return OrderVerdict(OrderRelation.DOMINATES, None, max(0.0, -lowest))
    if second:
        return OrderVerdict(OrderRelation.DOMINATED_BY, None, max(0.0, highest))
    witness = float(locations[int(np.argmin(diff))])
    return OrderVerdict(OrderRelation.INCOMPARABLE, witness, min(-lowest, highest))


def cdf_values(F: GridDistribution, xs: np.ndarray) -> np.ndarray:
    """Vectorized cdf lookup; points above 1 map to 1 and below 0 to 0."""
    xs = np.asarray(xs, dtype=float)
    idx = np.searchsorted(F.points, xs + settings.GRID_SNAP_TOL, side="right") - 1
    values = np.where(idx >= 0, F.cdf[np.clip(idx, 0, F.grid.size - 1)], 0.0)
    return np.where(xs >= 1.0, 1.0, values)


def cdf_at(F: GridDistribution, x: float) -> float:
    """F(x) = total weight at grid points <= x."""
    check_unit_interval(x, "x")
    return float(cdf_values(F, np.array([x]))[0])


def quantile_values(F: GridDistribution, qs: np.ndarray) -> np.ndarray:
    qs = np.asarray(qs, dtype=float)
    idx = np.searchsorted(F.cdf, qs - settings.GRID_SNAP_TOL, side="left")
    idx = np.clip(idx, 0, F.grid.size - 1)
    first_support = int(np.argmax(F.weights > 0.0))
    idx = np.where(qs <= 0.0, first_support, np.maximum(idx, first_support))
    return F.points[idx]


def quantile(F: GridDistribution, q: float) -> float:
    """Generalized inverse inf{x : F(x) >= q}; q = 0 returns the smallest support point."""
    check_unit_interval(q, "q")
    return float(quantile_values(F, np.array([q]))[0])


def fosd_compare(F: GridDistribution, G: GridDistribution, tol: Optional[float] = None,
                 midpoint: bool = False) -> OrderVerdict:
    """Relation of F to G in first-order stochastic dominance.

    dominates means F's cdf lies below G's everywhere (within tol). With
    midpoint=True the cdfs are read at cell midpoints (half of each atom),
    which removes the alternation of step cdfs around a continuous law.
    """
    _require_same_grid(F, G)
    tol = settings.ORDER_TOL_CDF if tol is None else tol
    if midpoint:
        return _verdict(G.cdf_mid - F.cdf_mid, tol, F.points)
    return _verdict(G.cdf - F.cdf, tol, F.points)


def convex_order_compare(qZ: Sequence[float], qT: Sequence[float], tol: Optional[float] = None) -> OrderVerdict:
    """Convex-order verdict from quantile samples on a common uniform q-grid.

    H(p) is the integral of qT - qZ from 0 to p. The verdict describes T relative
    to Z: dominates when T is larger in the convex order (H <= tol and |H(1)| <= tol),
    dominated_by for the reverse, incomparable when the means differ or H changes sign.
    """
    from scipy.integrate import cumulative_trapezoid

    tol = settings.ORDER_TOL_INTEGRATED if tol is None else tol
    z = np.asarray(qZ, dtype=float)
    t = np.asarray(qT, dtype=float)
    check_same_length(z, t, "quantile samples")
    if z.size < 2:
        raise InvalidInput("quantile samples need at least 2 points")
    levels = np.linspace(0.0, 1.0, z.size)
    H = cumulative_trapezoid(t - z, levels, initial=0.0)
    if abs(H[-1]) > tol:
        return OrderVerdict(OrderRelation.INCOMPARABLE, 1.0, float(abs(H[-1])))
    return _verdict(-H, tol, levels)


def integrated_survival(F: GridDistribution) -> np.ndarray:
    """S_F(x_i) = integral of (1 - F) from x_i to 1, exact for the step cdf."""
    segments = (1.0 - F.cdf[:-1]) * np.diff(F.points)
    tail = np.cumsum(segments[::-1])[::-1]
    return np.append(tail, 0.0)


def icx_compare(F: GridDistribution, G: GridDistribution, tol: Optional[float] = None) -> OrderVerdict:
    """Relation of F to G in the increasing convex order (integrated-survival criterion)."""
    _require_same_grid(F, G)
    tol = settings.ORDER_TOL_INTEGRATED if tol is None else tol
    return _verdict(integrated_survival(F) - integrated_survival(G), tol, F.points)


def majorizes(w: PrizeVector, v: PrizeVector) -> bool:
    """True iff w majorizes v: partial sums of w dominate those of v, totals equal."""
    check_same_length(w.v, v.v, "prize vectors")
    gap = w.partial_sums - v.partial_sums
    return bool(np.all(gap >= -1e-12) and abs(gap[-1]) <= 1e-12)


def pigou_dalton_path(v: PrizeVector, w: PrizeVector) -> List[Transfer]:
    """Reverse Pigou-Dalton transfers composing v into w.

    Givers (ranks where w is below v) are processed in increasing rank order;
    each gives to the earliest receivers above it that still need mass. Partial-sum
    dominance guarantees enough unmet need above every giver.

    Raises:
        AssumptionViolated: If w does not majorize v
    """
    if not majorizes(w, v):
        raise AssumptionViolated("pigou_dalton_path requires w to majorize v")

    need = np.maximum(w.v - v.v, 0.0)
    give = np.maximum(v.v - w.v, 0.0)
    transfers: List[Transfer] = []
    for j in range(v.n):
        remaining = give[j]
        i = 0
        while remaining > 1e-15 and i < j:
            if need[i] > 1e-15:
                delta = min(need[i], remaining)
                transfers.append(Transfer(i + 1, j + 1, float(delta)))
                need[i] -= delta
                remaining -= delta
            i += 1

    current = v.v.copy()
    for t in transfers:
        current[t.i - 1] += t.delta
        current[t.j - 1] -= t.delta
    error = float(np.max(np.abs(current - w.v)))
    if error > 1e-12:
        raise NumericalFailure(f"transfer path recomposes w only to {error:.3e}")
    return transfers


def max_interior_atom(F: GridDistribution) -> float:
    """Largest weight at grid points strictly inside (0, 1)."""
    interior = F.weights[1:-1]
    return float(interior.max()) if interior.size else 0.0


def levy_distance(F: GridDistribution, G: GridDistribution, tol: float = 1e-12) -> float:
    """Levy distance between two distributions on the same grid."""
    _require_same_grid(F, G)
    x = F.points

    def admissible(eps: float) -> bool:
        shifted = x + eps
        return bool(
            np.all(F.cdf <= cdf_values(G, shifted) + eps + 1e-15)
            and np.all(G.cdf <= cdf_values(F, shifted) + eps + 1e-15)
        )

    lo, hi = 0.0, 1.0
    if admissible(0.0):
        return 0.0
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        if admissible(mid):
            hi = mid
        else:
            lo = mid
    return hi


def t_of_x(x):
    """Time coordinate t = (1 - x)/x of an index value; x = 0 maps to infinity."""
    x = np.asarray(x, dtype=float)
    with np.errstate(divide="ignore"):
        return np.where(x > 0.0, (1.0 - x) / np.where(x > 0.0, x, 1.0), np.inf)


def x_of_t(t):
    """Index value x = 1/(1 + t); infinity maps to 0."""
    t = np.asarray(t, dtype=float)
    return np.where(np.isinf(t), 0.0, 1.0 / (1.0 + np.where(np.isinf(t), 0.0, t)))
