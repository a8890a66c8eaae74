"""
Prize specifications and their interim payoffs on a grid.

The interim prize a_F(x) is the expected prize of a player who realizes x
against n - 1 opponents drawing iid from F, with ties broken uniformly. The
planner's interim aggregate prize A_F(x) is the expected total prize of a
profile with one coordinate fixed at x. Rank-order and race prizes are
evaluated exactly; custom prizes use a deterministic oracle when one is given
and seeded Monte Carlo otherwise.
"""
from dataclasses import dataclass, field
from typing import Any, Callable, Optional, Sequence, Tuple, Union
import logging

import numpy as np
from scipy.special import comb

from ..core.validation import InvalidInput, NumericalFailure
from ..models.schemas import PrizeKind, SolverConfig
from .gridmeasure import Grid, GridDistribution, PrizeVector, quantile_values, t_of_x

logger = logging.getLogger(__name__)

LOCAL_KINDS = (PrizeKind.RANK_ORDER, PrizeKind.MIN_RACE, PrizeKind.MAX_QUALITY)


@dataclass(frozen=True)
class PrizeSpec:
    """Prize rule of an n-player symmetric game.

    Attributes:
        kind: Prize family
        n: Number of players
        v: Rank prizes (RankOrder)
        V: Value of the first success at time t (MinRace), V(inf) = 0
        Vq: Value of the winning quality q (MaxQuality)
        profile_prize: Custom prize of player 1, f(profiles (S, n), tie uniforms (S, n)) -> (S,)
        aggregate: Custom total prize Pi(profiles (S, n)) -> (S,)
        interim: Deterministic interim oracle f(points, weights (..., M)) -> (..., M)
        planner_interim: Deterministic planner-gradient oracle with the interim signature
        pi_bar: Prize bound; derived for the built-in kinds
    """

    kind: PrizeKind
    n: int
    v: Optional[PrizeVector] = None
    V: Optional[Callable] = None
    Vq: Optional[Callable] = None
    profile_prize: Optional[Callable] = None
    aggregate: Optional[Callable] = None
    interim: Optional[Callable] = None
    planner_interim: Optional[Callable] = None
    pi_bar: Optional[float] = None
    _table: Any = field(default=None, init=False, repr=False, compare=False)

    def __post_init__(self):
        if int(self.n) < 2:
            raise InvalidInput(f"n must be >= 2, got {self.n}")
        kind = PrizeKind(self.kind)
        if kind == PrizeKind.RANK_ORDER:
            if self.v is None or self.v.n != self.n:
                raise InvalidInput("rank-order prizes need a prize vector of length n")
            object.__setattr__(self, "_table", _rank_order_table(self.v))
        elif kind == PrizeKind.MIN_RACE and self.V is None:
            raise InvalidInput("min-race prizes need V(t)")
        elif kind == PrizeKind.MAX_QUALITY and self.Vq is None:
            raise InvalidInput("max-quality prizes need Vq(q)")
        elif kind == PrizeKind.CUSTOM and self.interim is None and self.profile_prize is None:
            raise InvalidInput("custom prizes need an interim oracle or a profile prize")
        elif kind == PrizeKind.RANK_ORDER_MC:
            raise InvalidInput("use PrizeSpec.rank_order_mc to build Monte Carlo rank-order prizes")

    # Constructors

    @classmethod
    def rank_order(cls, v: Union[PrizeVector, Sequence[float]]) -> "PrizeSpec":
        v = v if isinstance(v, PrizeVector) else PrizeVector.of(v)
        return cls(PrizeKind.RANK_ORDER, v.n, v=v)

    @classmethod
    def min_race(cls, n: int, V: Callable) -> "PrizeSpec":
        return cls(PrizeKind.MIN_RACE, int(n), V=V)

    @classmethod
    def max_quality(cls, n: int, Vq: Callable) -> "PrizeSpec":
        return cls(PrizeKind.MAX_QUALITY, int(n), Vq=Vq)

    @classmethod
    def custom(cls, n: int, profile_prize: Optional[Callable] = None, aggregate: Optional[Callable] = None,
               interim: Optional[Callable] = None, planner_interim: Optional[Callable] = None,
               pi_bar: Optional[float] = None) -> "PrizeSpec":
        return cls(PrizeKind.CUSTOM, int(n), profile_prize=profile_prize, aggregate=aggregate,
                   interim=interim, planner_interim=planner_interim, pi_bar=pi_bar)

    @classmethod
    def rank_order_mc(cls, v: Union[PrizeVector, Sequence[float]]) -> "PrizeSpec":
        """Rank-order prizes evaluated by Monte Carlo with explicit tie-breaking uniforms."""
        v = v if isinstance(v, PrizeVector) else PrizeVector.of(v)
        return cls.custom(
            v.n,
            profile_prize=rank_order_profile_prize(v),
            aggregate=lambda profiles: np.ones(profiles.shape[0]),
            pi_bar=float(v.v[0]),
        )

    @property
    def is_local(self) -> bool:
        """a_F(x) depends on F only through F(x-) and dF({x})."""
        return PrizeKind(self.kind) in LOCAL_KINDS

    @property
    def constant_aggregate(self) -> bool:
        return PrizeKind(self.kind) == PrizeKind.RANK_ORDER

    def index_value(self, grid: Grid) -> np.ndarray:
        """Winner's prize V-hat on the index grid (race kinds); zero at x = 0 for races."""
        kind = PrizeKind(self.kind)
        x = grid.points
        if kind == PrizeKind.MIN_RACE:
            t = t_of_x(x)
            values = np.asarray(self.V(np.where(np.isinf(t), 0.0, t)), dtype=float)
            return np.where(np.isinf(t), 0.0, np.broadcast_to(values, x.shape))
        if kind == PrizeKind.MAX_QUALITY:
            return np.broadcast_to(np.asarray(self.Vq(x), dtype=float), x.shape).copy()
        raise InvalidInput(f"{kind.value} prizes have no index value")

    def prize_bound(self, grid: Optional[Grid] = None) -> float:
        """pi-bar: v1 for rank order, the largest winner's prize for races."""
        kind = PrizeKind(self.kind)
        if kind == PrizeKind.RANK_ORDER:
            return float(self.v.v[0])
        if kind in (PrizeKind.MIN_RACE, PrizeKind.MAX_QUALITY):
            return float(np.max(self.index_value(grid or Grid.uniform())))
        if self.pi_bar is None:
            raise InvalidInput("custom prizes need an explicit pi_bar")
        return float(self.pi_bar)


def _rank_order_table(v: PrizeVector) -> Tuple[np.ndarray, ...]:
    """(below, tied, above, multinomial, share) for every split of the n - 1 opponents."""
    n = v.n
    prefix = np.concatenate(([0.0], np.cumsum(v.v)))
    rows = []
    for below in range(n):
        for tied in range(n - below):
            above = n - 1 - below - tied
            multinomial = comb(n - 1, below, exact=True) * comb(n - 1 - below, tied, exact=True)
            share = (prefix[above + tied + 1] - prefix[above]) / (tied + 1)
            rows.append((below, tied, above, multinomial, share))
    table = np.array(rows, dtype=float)
    return tuple(table[:, k] for k in range(5))


def rank_order_local(spec: PrizeSpec, below, tied) -> np.ndarray:
    """Tie-aware expected rank prize given P(opponent below) and P(opponent tied)."""
    b_exp, t_exp, a_exp, multinomial, share = spec._table
    below, tied = np.broadcast_arrays(
        np.clip(np.asarray(below, dtype=float), 0.0, 1.0),
        np.clip(np.asarray(tied, dtype=float), 0.0, 1.0),
    )
    shape = below.shape
    below = below.reshape(1, -1)
    tied = tied.reshape(1, -1)
    above = np.clip(1.0 - below - tied, 0.0, 1.0)
    terms = (
        (multinomial * share)[:, None]
        * np.power(below, b_exp[:, None])
        * np.power(tied, t_exp[:, None])
        * np.power(above, a_exp[:, None])
    )
    return terms.sum(axis=0).reshape(shape)


def race_win_share(n: int, below, tied) -> np.ndarray:
    """Expected share of the winner's prize: sum_k C(n-1,k) tied^k below^(n-1-k)/(k+1)."""
    below = np.clip(np.asarray(below, dtype=float), 0.0, 1.0)
    tied = np.clip(np.asarray(tied, dtype=float), 0.0, 1.0)
    total = np.zeros(np.broadcast(below, tied).shape)
    for k in range(n):
        total = total + comb(n - 1, k) * np.power(tied, k) * np.power(below, n - 1 - k) / (k + 1)
    return total


def interim_batch(spec: PrizeSpec, grid: Grid, weights: np.ndarray) -> np.ndarray:
    """Exact or oracle interim prizes for a batch of weight vectors (..., M)."""
    w = np.asarray(weights, dtype=float)
    kind = PrizeKind(spec.kind)
    if kind == PrizeKind.CUSTOM:
        if spec.interim is None:
            raise InvalidInput("batched interim prizes need a deterministic oracle")
        return np.asarray(spec.interim(grid.points, w), dtype=float)
    cdf = np.clip(np.cumsum(w, axis=-1), 0.0, 1.0)
    below = np.clip(cdf - w, 0.0, 1.0)
    if kind == PrizeKind.RANK_ORDER:
        return rank_order_local(spec, below, w)
    return spec.index_value(grid) * race_win_share(spec.n, below, w)


def planner_batch(spec: PrizeSpec, grid: Grid, weights: np.ndarray) -> np.ndarray:
    """Exact or oracle planner gradients for a batch of weight vectors (..., M)."""
    w = np.asarray(weights, dtype=float)
    kind = PrizeKind(spec.kind)
    if kind == PrizeKind.RANK_ORDER:
        return np.ones_like(w)
    if kind == PrizeKind.CUSTOM:
        if spec.planner_interim is None:
            raise InvalidInput("batched planner gradients need a deterministic oracle")
        return np.asarray(spec.planner_interim(grid.points, w), dtype=float)
    vhat = spec.index_value(grid)
    cdf_pow = np.power(np.clip(np.cumsum(w, axis=-1), 0.0, 1.0), spec.n - 1)
    increments = np.diff(cdf_pow, axis=-1, prepend=0.0)
    contributions = vhat * increments
    # Sum over k > i of vhat_k (cdf_k^(n-1) - cdf_(k-1)^(n-1)).
    tail = np.flip(np.cumsum(np.flip(contributions, axis=-1), axis=-1), axis=-1) - contributions
    return vhat * cdf_pow + tail


def _monte_carlo(spec: PrizeSpec, F: GridDistribution, cfg: SolverConfig,
                 fn: Callable, with_ties: bool) -> Tuple[np.ndarray, np.ndarray]:
    """Average fn over opponent profiles drawn by inverse cdf with common random numbers."""
    rng = np.random.default_rng(cfg.seed)
    S = int(cfg.mc_samples)
    opponents = quantile_values(F, rng.random((S, spec.n - 1)))
    ties = rng.random((S, spec.n))
    means = np.empty(F.grid.size)
    errors = np.empty(F.grid.size)
    for i, x in enumerate(F.points):
        profiles = np.column_stack([np.full(S, x), opponents])
        out = np.asarray(fn(profiles, ties) if with_ties else fn(profiles), dtype=float)
        means[i] = out.mean()
        errors[i] = out.std(ddof=1) / np.sqrt(S)
    return means, errors


def _check_standard_error(errors: np.ndarray, cfg: SolverConfig, what: str) -> None:
    worst = float(errors.max())
    if worst > cfg.kkt_tol / 10.0:
        raise NumericalFailure(
            f"{what} Monte Carlo standard error {worst:.3e} exceeds kkt_tol/10 = {cfg.kkt_tol / 10.0:.3e}"
        )


def interim_prize_with_error(spec: PrizeSpec, F: GridDistribution,
                             cfg: Optional[SolverConfig] = None) -> Tuple[np.ndarray, np.ndarray]:
    """a_F on the grid with its Monte Carlo standard error (zero for exact kinds)."""
    cfg = cfg or SolverConfig()
    if spec.is_local or spec.interim is not None:
        return interim_batch(spec, F.grid, F.weights), np.zeros(F.grid.size)
    means, errors = _monte_carlo(spec, F, cfg, spec.profile_prize, with_ties=True)
    _check_standard_error(errors, cfg, "interim prize")
    return means, errors


def interim_prize(spec: PrizeSpec, F: GridDistribution, cfg: Optional[SolverConfig] = None) -> np.ndarray:
    """
    Interim expected prize a_F(x) at every grid point.

    Raises:
        NumericalFailure: If a Monte Carlo estimate has standard error above kkt_tol/10
    """
    return interim_prize_with_error(spec, F, cfg)[0]


def planner_gradient(spec: PrizeSpec, F: GridDistribution, cfg: Optional[SolverConfig] = None) -> np.ndarray:
    """A_F(x) = E[Pi(x, X_2, ..., X_n)] with opponents iid F."""
    cfg = cfg or SolverConfig()
    kind = PrizeKind(spec.kind)
    if kind != PrizeKind.CUSTOM or spec.planner_interim is not None:
        return planner_batch(spec, F.grid, F.weights)
    if spec.aggregate is None:
        raise InvalidInput("planner solves need an aggregate prize")
    means, errors = _monte_carlo(spec, F, cfg, spec.aggregate, with_ties=False)
    _check_standard_error(errors, cfg, "planner gradient")
    return means


def expected_aggregate(spec: PrizeSpec, F: GridDistribution, cfg: Optional[SolverConfig] = None) -> float:
    """E[Pi] under the symmetric profile (F, ..., F)."""
    cfg = cfg or SolverConfig()
    kind = PrizeKind(spec.kind)
    if kind == PrizeKind.RANK_ORDER:
        return 1.0
    if kind in (PrizeKind.MIN_RACE, PrizeKind.MAX_QUALITY):
        vhat = spec.index_value(F.grid)
        return float(np.dot(vhat, np.diff(np.power(F.cdf, spec.n), prepend=0.0)))
    if spec.planner_interim is not None:
        return float(np.dot(planner_batch(spec, F.grid, F.weights), F.weights))
    if spec.aggregate is None:
        raise InvalidInput("planner objectives need an aggregate prize")
    rng = np.random.default_rng(cfg.seed)
    profiles = quantile_values(F, rng.random((int(cfg.mc_samples), spec.n)))
    return float(np.mean(spec.aggregate(profiles)))


def rank_order_profile_prize(v: PrizeVector) -> Callable[[np.ndarray, np.ndarray], np.ndarray]:
    """Prize of player 1 in each profile; ties are ordered by the players' uniforms."""
    prizes = np.asarray(v.v, dtype=float)

    def prize(profiles: np.ndarray, uniforms: np.ndarray) -> np.ndarray:
        own = profiles[:, :1]
        ahead = (profiles[:, 1:] > own) | ((profiles[:, 1:] == own) & (uniforms[:, 1:] > uniforms[:, :1]))
        return prizes[ahead.sum(axis=1)]

    return prize
