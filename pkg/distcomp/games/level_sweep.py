"""
Exact multiplier sweep for local games.

In a local game the net marginal return at grid point x_i depends on F only
through the mass R_i at or below x_i and the atom w_i at x_i (plus, for race
planners, an accumulator of the mass placed above). For a trial multiplier
lambda the sweep walks the grid from the top, placing at each point the mass
that brings the return down to lambda, or nothing when it is already below.
Running out of mass means lambda is too low; mass left over after the bottom
point means lambda is too high. Batches of multipliers are marched together
and the bracket shrinks geometrically.
"""
from dataclasses import dataclass
from typing import Callable, Optional, Tuple
import logging

import numpy as np

from ..core.validation import InvalidInput
from ..models.schemas import CostKind, PrizeKind, SolveMode
from .costfun import CostModel
from .gridmeasure import Grid, t_of_x
from .prizes import PrizeSpec, race_win_share, rank_order_local

logger = logging.getLogger(__name__)

BATCH = 64
ROUNDS = 8
INNER_STEPS = 50
MASS_EPS = 1e-14


class LocalProblem:
    """Net marginal return Phi_i(R, w) of a local game or planner problem."""

    def __init__(self, spec: PrizeSpec, cost: CostModel, grid: Grid, mode: SolveMode = SolveMode.GAME):
        if not spec.is_local:
            raise InvalidInput(f"{PrizeKind(spec.kind).value} prizes are not local")
        self.spec = spec
        self.cost = cost
        self.grid = grid
        self.mode = SolveMode(mode)
        self.n = spec.n
        self.kind = PrizeKind(spec.kind)
        self.cost_kind = CostKind(cost.kind)
        x = grid.points
        self.vhat = None if self.kind == PrizeKind.RANK_ORDER else spec.index_value(grid)
        if self.cost_kind == CostKind.LINEAR:
            self.c = np.broadcast_to(np.asarray(cost.c(x), dtype=float), x.shape)
        elif self.cost_kind == CostKind.SEPARABLE:
            self.gamma = np.broadcast_to(np.asarray(cost.gamma(x), dtype=float), x.shape)
        elif self.cost_kind == CostKind.TAIL_LOCAL:
            self.t = t_of_x(x)

    @property
    def size(self) -> int:
        return self.grid.size

    def benefit(self, i: int, R: np.ndarray, w: np.ndarray, S: np.ndarray) -> np.ndarray:
        if self.mode == SolveMode.GAME:
            if self.kind == PrizeKind.RANK_ORDER:
                return rank_order_local(self.spec, R - w, w)
            return self.vhat[i] * race_win_share(self.n, R - w, w)
        if self.kind == PrizeKind.RANK_ORDER:
            return np.ones_like(R)
        return self.vhat[i] * np.power(R, self.n - 1) + S

    def marginal_cost(self, i: int, R: np.ndarray, w: np.ndarray) -> np.ndarray:
        if self.cost_kind == CostKind.LINEAR:
            return np.full_like(R, self.c[i])
        if self.cost_kind == CostKind.SEPARABLE:
            return self.gamma[i] + np.asarray(self.cost.beta(R), dtype=float)
        if self.cost_kind == CostKind.LOCAL:
            return np.broadcast_to(np.asarray(self.cost.kappa(self.grid.points[i], R), dtype=float), R.shape)
        if np.isinf(self.t[i]):
            return np.full_like(R, self.cost.c_inf)
        time_cdf = np.clip(1.0 - R + w, 0.0, 1.0)
        return np.broadcast_to(np.asarray(self.cost.kappa(self.t[i], time_cdf), dtype=float), R.shape)

    def phi(self, i: int, R: np.ndarray, w: np.ndarray, S: np.ndarray) -> np.ndarray:
        return self.benefit(i, R, w, S) - self.marginal_cost(i, R, w)

    def advance(self, i: int, R: np.ndarray, w: np.ndarray, S: np.ndarray) -> np.ndarray:
        if self.mode == SolveMode.PLANNER and self.vhat is not None:
            return S + self.vhat[i] * (np.power(R, self.n - 1) - np.power(np.clip(R - w, 0.0, 1.0), self.n - 1))
        return S

    def bracket(self) -> Tuple[float, float]:
        """Multipliers certainly too low and too high."""
        if self.kind == PrizeKind.RANK_ORDER:
            top = 1.0 if self.mode == SolveMode.PLANNER else float(self.spec.v.v[0])
        else:
            top = float(np.max(self.vhat))
        costs = []
        for i in range(self.size):
            for R in (0.0, 1.0):
                for w in (0.0, R):
                    costs.append(float(self.marginal_cost(i, np.array([R]), np.array([w]))[0]))
        return -max(costs) - 1.0, top - min(costs) + 1.0


@dataclass
class MarchResult:
    weights: np.ndarray
    capped: np.ndarray
    leftover: np.ndarray
    phi: np.ndarray


def march(problem: LocalProblem, lams: np.ndarray) -> MarchResult:
    """Walk the grid from the top for every multiplier in lams."""
    lams = np.asarray(lams, dtype=float)
    K, M = lams.size, problem.size
    R = np.ones(K)
    S = np.zeros(K)
    capped = np.zeros(K, dtype=bool)
    weights = np.zeros((K, M))
    phi_rec = np.zeros((K, M))
    zeros = np.zeros(K)

    for i in range(M - 1, -1, -1):
        w = np.zeros(K)
        phi_full = problem.phi(i, R, R, S)
        full = phi_full > lams
        live = R > MASS_EPS
        capped |= full & live
        w[full] = R[full]

        interior = (~full) & (problem.phi(i, R, zeros, S) > lams)
        if interior.any():
            Ri, Si, li = R[interior], S[interior], lams[interior]
            lo, hi = np.zeros_like(Ri), Ri.copy()
            for _ in range(INNER_STEPS):
                mid = 0.5 * (lo + hi)
                above = problem.phi(i, Ri, mid, Si) > li
                lo = np.where(above, mid, lo)
                hi = np.where(above, hi, mid)
            w[interior] = 0.5 * (lo + hi)

        weights[:, i] = w
        phi_rec[:, i] = problem.phi(i, R, w, S)
        S = problem.advance(i, R, w, S)
        R = np.clip(R - w, 0.0, 1.0)

    return MarchResult(weights=weights, capped=capped, leftover=R, phi=phi_rec)


def sweep_solve(problem: LocalProblem, rounds: int = ROUNDS, batch: int = BATCH,
                on_round: Optional[Callable[[int, float, float], None]] = None) -> Tuple[np.ndarray, float, int]:
    """Bisect the multiplier in batches; returns (weights, multiplier, rounds used)."""
    lo, hi = problem.bracket()
    used = 0
    for used in range(1, rounds + 1):
        lams = np.linspace(lo, hi, batch + 2)[1:-1]
        result = march(problem, lams)
        low = result.capped
        if (~low).any():
            first_high = int(np.argmax(~low))
            hi = float(lams[first_high])
            below = lams[:first_high][low[:first_high]]
            lo = float(below.max()) if below.size else lo
        else:
            lo = float(lams[-1])
        if on_round is not None:
            on_round(used, lo, hi)
        logger.debug(f"Sweep round {used}: multiplier bracket [{lo:.15g}, {hi:.15g}]")
        if hi - lo <= 1e-15 * max(1.0, abs(hi)):
            break

    final = march(problem, np.array([hi]))
    weights = final.weights[0].copy()
    leftover = float(final.leftover[0])
    if leftover > 0.0:
        phi = final.phi[0]
        target = int(np.argmax(phi >= phi.max() - 1e-12))
        weights[target] += leftover
    weights = np.clip(weights, 0.0, None)
    return weights / weights.sum(), hi, used
