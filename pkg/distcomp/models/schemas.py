from pydantic import BaseModel, Field, field_validator, model_validator
from datetime import datetime
from typing import List, Optional, Dict, Any
from enum import Enum

import pytz

from ..core.config import settings


class Command(str, Enum):
    SOLVE_CONTEST = "solve-contest"
    COMPARE_PRIZES = "compare-prizes"
    ENTRY_SWEEP = "entry-sweep"
    SOLVE_RACE = "solve-race"
    SOLVE_QUALITY = "solve-quality"
    SOLVE_MARKET = "solve-market"
    MARKET_LIMIT_SWEEP = "market-limit-sweep"
    VERIFY_KKT = "verify-kkt"
    VALIDATE_COST = "validate-cost"


class CostKind(str, Enum):
    LINEAR = "linear"
    SEPARABLE = "separable"
    LOCAL = "local"
    TAIL_LOCAL = "tail_local"


class FunctionForm(str, Enum):
    POWER = "power"
    AFFINE = "affine"
    EXP_DECAY = "exp_decay"
    TABULATED = "tabulated"


class BivariateForm(str, Enum):
    SUM = "sum"
    PRODUCT = "product"
    TAIL = "tail"


class SolverMethod(str, Enum):
    AUTO = "auto"
    LEVEL_SWEEP = "level_sweep"
    MIRROR_PROX = "mirror_prox"
    DAMPED_BEST_RESPONSE = "damped_best_response"


class StartKind(str, Enum):
    UNIFORM = "uniform"
    QUADRATIC = "quadratic"
    POINT_MASS_ZERO = "point_mass_zero"
    GIVEN = "given"


class SolveMode(str, Enum):
    GAME = "game"
    PLANNER = "planner"


class PrizeKind(str, Enum):
    RANK_ORDER = "rank_order"
    RANK_ORDER_MC = "rank_order_mc"
    MIN_RACE = "min_race"
    MAX_QUALITY = "max_quality"
    CUSTOM = "custom"


class RaceMode(str, Enum):
    RD = "rd"
    QUALITY = "quality"


class OrderRelation(str, Enum):
    DOMINATES = "dominates"
    DOMINATED_BY = "dominated_by"
    EQUAL = "equal"
    INCOMPARABLE = "incomparable"


class FunctionSpec(BaseModel):
    """A scalar function drawn from the named-function catalog."""

    form: FunctionForm
    a: Optional[float] = Field(None, description="Scale or intercept, depending on the form")
    b: Optional[float] = Field(None, description="Slope of the affine form")
    p: Optional[float] = Field(None, gt=0, description="Exponent of the power form")
    r: Optional[float] = Field(None, description="Rate of the exponential-decay form")
    knots: Optional[List[float]] = Field(None, description="Abscissae of a tabulated function")
    values: Optional[List[float]] = Field(None, description="Ordinates of a tabulated function")

    class Config:
        extra = "forbid"
        frozen = True
        json_schema_extra = {
            "example": {"form": "power", "a": 2.0, "p": 1.0}
        }


class BivariateSpec(BaseModel):
    """kappa(x, q) assembled from catalog functions: f(x)+g(q), f(x)*g(q) or base + h(t)*g(q)."""

    form: BivariateForm
    f: Optional[FunctionSpec] = None
    g: Optional[FunctionSpec] = None
    h: Optional[FunctionSpec] = None
    base: float = Field(0.0, description="Constant term of the tail form")

    @model_validator(mode="after")
    def check_parts(self) -> "BivariateSpec":
        needed = {"sum": ("f", "g"), "product": ("f", "g"), "tail": ("h", "g")}[self.form.value]
        missing = [name for name in needed if getattr(self, name) is None]
        if missing:
            raise ValueError(f"bivariate form '{self.form.value}' requires {missing}")
        return self

    class Config:
        extra = "forbid"
        frozen = True
        json_schema_extra = {
            "example": {
                "form": "tail",
                "base": 0.05,
                "h": {"form": "exp_decay", "a": 1.0, "r": 2.0},
                "g": {"form": "affine", "a": 1.2, "b": 0.3}
            }
        }


class CostSpec(BaseModel):
    kind: CostKind
    c: Optional[FunctionSpec] = Field(None, description="Kernel of a linear cost")
    gamma: Optional[FunctionSpec] = Field(None, description="Index part of a separable cost")
    beta: Optional[FunctionSpec] = Field(None, description="Rank part of a separable cost")
    kappa: Optional[BivariateSpec] = Field(None, description="Kernel of a local or tail-local cost")
    c_inf: float = Field(0.0, description="Asymptotic marginal cost of a tail-local cost")
    quadrature_steps: int = Field(default_factory=lambda: settings.QUADRATURE_STEPS, ge=1)
    steepness: Optional[float] = Field(None, gt=0, description="Declared steepness constant of the kernel")

    @model_validator(mode="after")
    def check_kind_fields(self) -> "CostSpec":
        needed = {
            CostKind.LINEAR: ("c",),
            CostKind.SEPARABLE: ("gamma", "beta"),
            CostKind.LOCAL: ("kappa",),
            CostKind.TAIL_LOCAL: ("kappa",),
        }[self.kind]
        missing = [name for name in needed if getattr(self, name) is None]
        if missing:
            raise ValueError(f"cost kind '{self.kind.value}' requires {missing}")
        return self

    class Config:
        extra = "forbid"
        frozen = True
        json_schema_extra = {
            "example": {
                "kind": "separable",
                "gamma": {"form": "power", "a": 2.0, "p": 1.0},
                "beta": {"form": "affine", "a": 0.0, "b": 0.0}
            }
        }


class SolverConfig(BaseModel):
    method: SolverMethod = SolverMethod.AUTO
    damping: float = Field(default_factory=lambda: settings.DAMPING, gt=0, le=1, description="Damping tau in (0, 1]")
    max_iter: int = Field(default_factory=lambda: settings.MAX_ITER, ge=1)
    kkt_tol: float = Field(default_factory=lambda: settings.KKT_TOL, gt=0)
    inner_iter: int = Field(default_factory=lambda: settings.INNER_ITER, ge=1, description="Frank-Wolfe iterations")
    support_eps: float = Field(default_factory=lambda: settings.SUPPORT_EPS, gt=0)
    seed: int = Field(0, ge=0)
    mean_constraint: Optional[float] = Field(None, ge=0, le=1, description="Fix the mean of every iterate")
    start: StartKind = StartKind.UNIFORM
    step_size: float = Field(default_factory=lambda: settings.STEP_SIZE, gt=0)
    mc_samples: int = Field(default_factory=lambda: settings.MC_SAMPLES, ge=100)

    class Config:
        extra = "forbid"
        frozen = True
        json_schema_extra = {
            "example": {"method": "auto", "damping": 0.5, "kkt_tol": 1e-3, "max_iter": 5000, "seed": 0}
        }


class PrizeModel(BaseModel):
    """JSON form of a prize specification."""

    kind: PrizeKind
    n: int = Field(..., ge=2)
    prizes: Optional[List[float]] = Field(None, description="Rank prizes v1 >= ... >= vn = 0")
    r: float = Field(1.0, gt=0, description="Discount rate of the R&D race")
    m: float = Field(1.0, gt=0, description="Margin of the quality race")
    demand: Optional[FunctionSpec] = None

    @model_validator(mode="after")
    def check_prizes(self) -> "PrizeModel":
        if self.kind in (PrizeKind.RANK_ORDER, PrizeKind.RANK_ORDER_MC):
            if self.prizes is None:
                raise ValueError("rank-order prizes require 'prizes'")
            if len(self.prizes) != self.n:
                raise ValueError(f"'prizes' has {len(self.prizes)} entries for n = {self.n}")
        if self.kind == PrizeKind.CUSTOM:
            raise ValueError("custom prizes are built in code, not from JSON")
        return self

    class Config:
        extra = "forbid"


class DistributionModel(BaseModel):
    grid: List[float]
    weights: List[float]

    class Config:
        extra = "forbid"


class TasteModel(BaseModel):
    kind: str = Field("uniform", pattern="^(uniform|tabulated)$")
    knots: Optional[List[float]] = None
    values: Optional[List[float]] = None

    class Config:
        extra = "forbid"


class ContestCommandSpec(BaseModel):
    prizes: List[float] = Field(..., min_length=2)
    cost: CostSpec
    general_solver: bool = Field(True, description="Also run the general solver and report the Levy distance")

    class Config:
        extra = "forbid"
        json_schema_extra = {
            "example": {"prizes": [1, 0, 0], "cost": {"kind": "linear", "c": {"form": "power", "a": 2.0, "p": 1.0}}}
        }


class ComparePrizesSpec(BaseModel):
    v: List[float] = Field(..., min_length=2)
    w: List[float] = Field(..., min_length=2)
    cost: CostSpec

    class Config:
        extra = "forbid"


class EntrySweepSpec(BaseModel):
    kappa: BivariateSpec
    n_list: List[int] = Field(..., min_length=1)
    q_points: int = Field(1001, ge=11)

    @field_validator("n_list")
    @classmethod
    def ascending(cls, value: List[int]) -> List[int]:
        if any(n < 2 for n in value) or any(b <= a for a, b in zip(value, value[1:])):
            raise ValueError("n_list must be strictly ascending with every n >= 2")
        return value

    class Config:
        extra = "forbid"


class RaceCommandSpec(BaseModel):
    n: int = Field(..., ge=2)
    mode: RaceMode = RaceMode.RD
    r: float = Field(1.0, gt=0)
    m: float = Field(1.0, gt=0)
    demand: Optional[FunctionSpec] = None
    cost: CostSpec
    eta1: float = Field(0.1, ge=0)

    class Config:
        extra = "forbid"


class MarketCommandSpec(BaseModel):
    n: int = Field(..., ge=2)
    sigma: float = Field(..., gt=0, lt=1)
    taste: TasteModel = Field(default_factory=TasteModel)
    cost: CostSpec
    p_max: float = Field(default_factory=lambda: settings.P_MAX, gt=0)

    class Config:
        extra = "forbid"


class MarketLimitSpec(BaseModel):
    n_list: List[int] = Field(..., min_length=1)
    sigma: float = Field(..., gt=0, lt=1)
    taste: TasteModel = Field(default_factory=TasteModel)
    cost: CostSpec
    p_max: float = Field(default_factory=lambda: settings.P_MAX, gt=0)

    @field_validator("n_list")
    @classmethod
    def ascending(cls, value: List[int]) -> List[int]:
        if any(n < 2 for n in value) or any(b <= a for a, b in zip(value, value[1:])):
            raise ValueError("n_list must be strictly ascending with every n >= 2")
        return value

    class Config:
        extra = "forbid"


class VerifyKKTSpec(BaseModel):
    prize: PrizeModel
    cost: CostSpec
    mode: SolveMode = SolveMode.GAME
    distribution: Optional[DistributionModel] = Field(None, description="Distribution to certify; solved when absent")

    class Config:
        extra = "forbid"


class ValidateCostSpec(BaseModel):
    cost: CostSpec
    pi_bar: float = Field(..., ge=0)
    eta1: float = Field(..., ge=0)
    trial_count: int = Field(20, ge=1)

    class Config:
        extra = "forbid"


COMMAND_SPECS = {
    Command.SOLVE_CONTEST: ContestCommandSpec,
    Command.COMPARE_PRIZES: ComparePrizesSpec,
    Command.ENTRY_SWEEP: EntrySweepSpec,
    Command.SOLVE_RACE: RaceCommandSpec,
    Command.SOLVE_QUALITY: RaceCommandSpec,
    Command.SOLVE_MARKET: MarketCommandSpec,
    Command.MARKET_LIMIT_SWEEP: MarketLimitSpec,
    Command.VERIFY_KKT: VerifyKKTSpec,
    Command.VALIDATE_COST: ValidateCostSpec,
}


class ExperimentConfig(BaseModel):
    schema_version: str = Field(default_factory=lambda: settings.SCHEMA_VERSION)
    command: Command
    spec: Dict[str, Any] = Field(..., description="Command-specific specification")
    solver: SolverConfig = Field(default_factory=SolverConfig)
    output_dir: str = Field("results", description="Directory receiving every artifact of the run")
    seed: int = Field(0, ge=0)
    threads: int = Field(default_factory=lambda: settings.THREADS, ge=1)
    grid: int = Field(default_factory=lambda: settings.GRID_SIZE, ge=2)

    @field_validator("schema_version")
    @classmethod
    def supported_version(cls, value: str) -> str:
        if value != settings.SCHEMA_VERSION:
            raise ValueError(f"unsupported schema_version {value!r} (expected {settings.SCHEMA_VERSION!r})")
        return value

    def command_spec(self) -> BaseModel:
        return COMMAND_SPECS[self.command].model_validate(self.spec)

    class Config:
        extra = "forbid"
        json_schema_extra = {
            "example": {
                "schema_version": "1.0",
                "command": "compare-prizes",
                "spec": {
                    "v": [0.5, 0.5, 0.0],
                    "w": [1.0, 0.0, 0.0],
                    "cost": {"kind": "separable", "gamma": {"form": "power", "a": 2.0, "p": 1.0},
                             "beta": {"form": "affine", "a": 0.0, "b": 0.0}}
                },
                "output_dir": "results/compare",
                "seed": 0
            }
        }


class ArtifactRecord(BaseModel):
    name: str
    sha256: str
    columns: List[str] = Field(default_factory=list)
    numeric: bool = True


class RunManifest(BaseModel):
    schema_version: str = Field(default_factory=lambda: settings.SCHEMA_VERSION)
    command: Command
    config_echo: Dict[str, Any]
    input_hash: str = Field(..., description="git-style sha1 of the replay-relevant inputs")
    timestamp: datetime = Field(default_factory=lambda: datetime.now(pytz.UTC))
    wall_time_seconds: float = Field(..., ge=0)
    artifacts: List[ArtifactRecord] = Field(default_factory=list)
    verdicts: Dict[str, Any] = Field(default_factory=dict)
    exit_code: int = Field(..., ge=0, le=2)


class ErrorReport(BaseModel):
    error_type: str
    message: str
    field: Optional[str] = None
    exit_code: int = Field(1, ge=1, le=2)
    timestamp: datetime = Field(default_factory=lambda: datetime.now(pytz.UTC))
