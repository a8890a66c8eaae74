"""
Batch front end: JSON experiment configs in, CSV/JSON artifacts and a manifest out.

Exit codes: 0 on success with converged certificates, 1 on invalid input or a
violated assumption (error.json written), 2 on non-convergence, a numerical failure
or an unexpected error (partial artifacts written).
"""
import argparse
import hashlib
import json
import logging
import math
import os
import sys
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable, Dict, List, Optional, Tuple, Union

import numpy as np
import pandas as pd
from pydantic import BaseModel, ValidationError

from .core.config import settings
from .core.logging_config import setup_logging
from .core.metrics import metrics_snapshot
from .core.validation import AssumptionViolated, InvalidInput, NoConvergence, NumericalFailure
from .games import contest, market, race
from .games.costfun import CostModel, validate
from .games.eqsolver import kkt_residual, net_return, solve_planner, solve_symmetric_equilibrium
from .games.functions import build_bivariate, build_function
from .games.gridmeasure import Grid, GridDistribution, levy_distance
from .games.prizes import PrizeSpec
from .models.schemas import (
    ArtifactRecord,
    Command,
    CostKind,
    ErrorReport,
    ExperimentConfig,
    PrizeKind,
    PrizeModel,
    RaceMode,
    RunManifest,
    SolveMode,
)

logger = logging.getLogger(__name__)

MANIFEST_NAME = "manifest.json"
RESOLVED_CONFIG_NAME = "resolved_config.json"
ERROR_NAME = "error.json"
REPLAY_IGNORED = ("seed", "threads", "output_dir")

Artifact = Union[pd.DataFrame, Dict[str, Any]]


@dataclass
class CommandResult:
    """Artifacts (written in insertion order), verdicts for the manifest, and the certificate flag."""

    artifacts: Dict[str, Artifact] = field(default_factory=dict)
    verdicts: Dict[str, Any] = field(default_factory=dict)
    converged: bool = True


@dataclass
class ReplayResult:
    identical: bool
    first_difference: Optional[str] = None

    def __bool__(self) -> bool:
        return self.identical


# Serialization

def _plain(value: Any) -> Any:
    """JSON-safe copy: numpy scalars and arrays become Python values, non-finite floats become strings."""
    if isinstance(value, dict):
        return {str(k): _plain(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_plain(v) for v in value]
    if isinstance(value, np.ndarray):
        return [_plain(v) for v in value.tolist()]
    if isinstance(value, (np.bool_,)):
        return bool(value)
    if isinstance(value, (np.integer,)):
        return int(value)
    if isinstance(value, (float, np.floating)):
        value = float(value)
        return value if math.isfinite(value) else str(value)
    if isinstance(value, BaseModel):
        return _plain(value.model_dump(mode="json"))
    return value


def _dump_json(data: Any) -> str:
    return json.dumps(_plain(data), indent=2, sort_keys=True)


def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def write_artifact(output_dir: Path, name: str, artifact: Artifact) -> ArtifactRecord:
    """Write one CSV (DataFrame) or JSON (dict) artifact and describe it."""
    path = output_dir / name
    if isinstance(artifact, pd.DataFrame):
        artifact.to_csv(path, index=False, float_format="%.17g")
        columns = [str(c) for c in artifact.columns]
    else:
        path.write_text(_dump_json(artifact))
        columns = []
    record = ArtifactRecord(name=name, sha256=_sha256(path), columns=columns, numeric=True)
    logger.debug(f"Wrote {path} ({record.sha256[:12]})")
    return record


def _git_hash(payload: Dict[str, Any]) -> str:
    data = json.dumps(_plain(payload), sort_keys=True, separators=(",", ":")).encode("utf-8")
    return hashlib.sha1(b"blob %d\0" % len(data) + data).hexdigest()


def _write_manifest(output_dir: Path, manifest: RunManifest) -> Path:
    """Write the manifest atomically; its presence marks a complete run."""
    path = output_dir / MANIFEST_NAME
    tmp = output_dir / f".{MANIFEST_NAME}.tmp"
    tmp.write_text(manifest.model_dump_json(indent=2))
    os.replace(tmp, path)
    return path


# Spec builders

def _grid(config: ExperimentConfig) -> Grid:
    return Grid.uniform(config.grid)


def prize_from_model(model: PrizeModel) -> PrizeSpec:
    kind = PrizeKind(model.kind)
    if kind == PrizeKind.RANK_ORDER:
        return PrizeSpec.rank_order(model.prizes)
    if kind == PrizeKind.RANK_ORDER_MC:
        return PrizeSpec.rank_order_mc(model.prizes)
    if kind == PrizeKind.MIN_RACE:
        r = model.r
        return PrizeSpec.min_race(model.n, lambda t: np.exp(-r * np.asarray(t, dtype=float)))
    if model.demand is None:
        raise InvalidInput("max-quality prizes need 'demand'")
    demand = build_function(model.demand)
    m = model.m
    return PrizeSpec.max_quality(model.n, lambda q: m * np.asarray(demand(q), dtype=float))


def _market_spec(spec, config: ExperimentConfig, n: Optional[int] = None) -> market.MarketSpec:
    return market.MarketSpec(
        n=int(n if n is not None else spec.n),
        sigma=spec.sigma,
        taste=market.TasteDensity.from_model(spec.taste),
        cost=CostModel.from_spec(spec.cost),
        grid=_grid(config),
        p_max=spec.p_max,
    )


# Command handlers

def _solve_contest(config: ExperimentConfig, spec) -> CommandResult:
    grid = _grid(config)
    cost = CostModel.from_spec(spec.cost)
    contest_spec = contest.ContestSpec.of(spec.prizes, cost)
    prize = PrizeSpec.rank_order(contest_spec.v)
    result = CommandResult()
    table = pd.DataFrame({"x": grid.points})
    summary: Dict[str, Any] = {"n": contest_spec.n}

    closed = None
    if CostKind(cost.kind) == CostKind.SEPARABLE:
        closed = contest.solve_closed_form(contest_spec, grid)
        closed_report = kkt_residual(prize, closed.F, cost, cfg=config.solver)
        table["F_closed"] = closed.F.cdf
        summary["closed_form"] = closed.to_dict()
        summary["closed_form_kkt"] = closed_report.to_dict()
        result.verdicts["closed_form_sup_violation"] = closed_report.sup_violation

    if spec.general_solver or closed is None:
        F, report = solve_symmetric_equilibrium(prize, cost, config.solver, grid=grid)
        table["F_solver"] = F.cdf
        summary["solver_kkt"] = report.to_dict()
        summary["expected_output"] = contest.expected_output(F)
        summary["expected_max_output"] = contest.expected_max_output(F, contest_spec.n)
        result.verdicts["solver_converged"] = report.converged
        result.converged = report.converged
        if closed is not None:
            distance = levy_distance(closed.F, F)
            summary["levy_distance"] = distance
            result.verdicts["levy_distance"] = distance

    result.artifacts["contest_cdf.csv"] = table
    result.artifacts["contest_summary.json"] = summary
    return result


def _compare_prizes(config: ExperimentConfig, spec) -> CommandResult:
    grid = _grid(config)
    cost = CostModel.from_spec(spec.cost)
    check = contest.icx_theorem_check(contest.ContestSpec.of(spec.v, cost), contest.ContestSpec.of(spec.w, cost), grid)
    cdfs = pd.DataFrame({"x": grid.points, "F_v": check.equilibrium_v.F.cdf, "F_w": check.equilibrium_w.F.cdf})
    quantiles = pd.DataFrame({"q": check.equilibrium_v.q_grid, "g_v": check.equilibrium_v.g_samples,
                              "g_w": check.equilibrium_w.g_samples})
    return CommandResult(
        artifacts={"compare_cdf.csv": cdfs, "compare_quantiles.csv": quantiles, "compare_summary.json": check.to_dict()},
        verdicts={"icx_dominates": check.dominates, "icx": check.verdict.relation.value},
    )


def _entry_sweep(config: ExperimentConfig, spec) -> CommandResult:
    grid = _grid(config)
    sweep = contest.entry_sweep(build_bivariate(spec.kappa), spec.n_list, grid, q_points=spec.q_points)
    cdfs = pd.DataFrame({"x": grid.points})
    quantiles = pd.DataFrame({"q": sweep.q_grid})
    for n, F, Q in zip(sweep.n_list, sweep.distributions, sweep.quantiles):
        cdfs[f"F_{n}"] = F.cdf
        quantiles[f"Q_{n}"] = Q
    return CommandResult(
        artifacts={"entry_cdf.csv": cdfs, "entry_quantiles.csv": quantiles, "entry_summary.json": sweep.to_dict()},
        verdicts={"output_falls": sweep.output_falls},
    )


def _race(config: ExperimentConfig, spec, mode: RaceMode) -> CommandResult:
    race_spec = race.RaceSpec.from_command(spec, race.TimeGrid.from_size(config.grid), mode)
    if mode == RaceMode.QUALITY:
        solution = race.quality_race(race_spec, config.solver)
    else:
        solution = race.solve_race(race_spec, config.solver)
    prefix = "quality" if mode == RaceMode.QUALITY else "race"
    return CommandResult(
        artifacts={f"{prefix}_cdf.csv": solution.to_frame(), f"{prefix}_summary.json": solution.to_dict()},
        verdicts={
            "fosd": solution.fosd.relation.value,
            "overinvestment": solution.overinvestment,
            "pinning_gaps": solution.pinning_gaps,
        },
        converged=solution.report_eq.converged and solution.report_pl.converged,
    )


def _solve_market(config: ExperimentConfig, spec) -> CommandResult:
    equilibrium = market.solve_market(_market_spec(spec, config), config.solver)
    smoothed = equilibrium.smoothed
    return CommandResult(
        artifacts={
            "market_distribution.csv": equilibrium.F.to_frame(),
            "market_smoothed.csv": pd.DataFrame({"z": smoothed.z, "F_hat": smoothed.F_hat}),
            "market_density.csv": pd.DataFrame({"z_mid": 0.5 * (smoothed.z[1:] + smoothed.z[:-1]),
                                                "f_hat": smoothed.f_hat}),
            "market_deviation_scan.csv": equilibrium.deviation_scan,
            "market_summary.json": equilibrium.to_dict(),
        },
        verdicts={
            "p": equilibrium.p,
            "cost_gap": equilibrium.cost_gap,
            "price_dev_gap": equilibrium.price_dev_gap,
        },
        converged=equilibrium.kkt.converged,
    )


def _market_limit_sweep(config: ExperimentConfig, spec) -> CommandResult:
    sweep = market.run_limit_sweep(_market_spec(spec, config, n=spec.n_list[0]), spec.n_list, config.solver,
                                   threads=config.threads)
    return CommandResult(
        artifacts={"market_limit.csv": sweep.table, "market_limit_summary.json": sweep.to_dict()},
        verdicts=sweep.to_dict(),
        converged=all(eq.kkt.converged for eq in sweep.equilibria),
    )


def _verify_kkt(config: ExperimentConfig, spec) -> CommandResult:
    prize = prize_from_model(spec.prize)
    cost = CostModel.from_spec(spec.cost)
    mode = SolveMode(spec.mode)
    if spec.distribution is not None:
        F = GridDistribution.from_dict(spec.distribution.model_dump())
        report = kkt_residual(prize, F, cost, mode, config.solver)
    elif mode == SolveMode.GAME:
        F, report = solve_symmetric_equilibrium(prize, cost, config.solver, grid=_grid(config))
    else:
        F, report = solve_planner(prize, cost, config.solver, grid=_grid(config))
    table = F.to_frame()
    table["phi"] = net_return(prize, cost, F, mode, config.solver)
    return CommandResult(
        artifacts={"kkt_distribution.csv": table, "kkt_report.json": report.to_dict()},
        verdicts={"converged": report.converged, "sup_violation": report.sup_violation},
        converged=report.converged,
    )


def _validate_cost(config: ExperimentConfig, spec) -> CommandResult:
    outcome = validate(CostModel.from_spec(spec.cost), spec.pi_bar, spec.eta1, spec.trial_count, config.seed)
    return CommandResult(
        artifacts={"cost_validation.json": outcome.to_dict()},
        verdicts={"passed": outcome.passed, "first_violation": outcome.first_violation},
    )


HANDLERS: Dict[Command, Callable[[ExperimentConfig, Any], CommandResult]] = {
    Command.SOLVE_CONTEST: _solve_contest,
    Command.COMPARE_PRIZES: _compare_prizes,
    Command.ENTRY_SWEEP: _entry_sweep,
    Command.SOLVE_RACE: lambda config, spec: _race(config, spec, RaceMode.RD),
    Command.SOLVE_QUALITY: lambda config, spec: _race(config, spec, RaceMode.QUALITY),
    Command.SOLVE_MARKET: _solve_market,
    Command.MARKET_LIMIT_SWEEP: _market_limit_sweep,
    Command.VERIFY_KKT: _verify_kkt,
    Command.VALIDATE_COST: _validate_cost,
}


def dispatch(config: ExperimentConfig) -> CommandResult:
    """Validate the command spec and run its handler."""
    spec = config.command_spec()
    logger.info(f"Dispatching {config.command.value}")
    return HANDLERS[Command(config.command)](config, spec)


# Runs

def resolve_config(data: Dict[str, Any], command: Optional[str] = None, output_dir: Optional[str] = None,
                   seed: Optional[int] = None, threads: Optional[int] = None,
                   grid: Optional[int] = None) -> ExperimentConfig:
    """Apply command-line overrides and copy the run seed into the solver config."""
    data = dict(data)
    if command is not None:
        if "command" in data and data["command"] != command:
            raise InvalidInput(f"command '{command}' does not match the config's '{data['command']}'")
        data["command"] = command
    for key, value in (("output_dir", output_dir), ("seed", seed), ("threads", threads), ("grid", grid)):
        if value is not None:
            data[key] = value
    config = ExperimentConfig.model_validate(data)
    return config.model_copy(update={"solver": config.solver.model_copy(update={"seed": config.seed})})


def _error_field(error: ValidationError) -> Optional[str]:
    errors = error.errors()
    if not errors:
        return None
    return ".".join(str(part) for part in errors[0].get("loc", ())) or None


def _write_error(output_dir: Path, report: ErrorReport) -> None:
    text = report.model_dump_json(indent=2)
    (output_dir / ERROR_NAME).write_text(text)
    print(text)


def _partial_artifacts(error: NoConvergence) -> Dict[str, Artifact]:
    artifacts: Dict[str, Artifact] = {}
    if isinstance(error.result, GridDistribution):
        artifacts["partial_distribution.csv"] = error.result.to_frame()
    if error.report is not None and hasattr(error.report, "to_dict"):
        artifacts["partial_kkt.json"] = error.report.to_dict()
    return artifacts


def run(config: ExperimentConfig) -> int:
    """
    Execute one experiment and write its artifacts.

    Returns:
        Exit code: 0 success, 1 invalid input or violated assumption, 2 non-converged or unexpected failure
    """
    start_time = time.perf_counter()
    output_dir = Path(config.output_dir)
    output_dir.mkdir(parents=True, exist_ok=True)
    resolved = config.model_dump(mode="json")
    (output_dir / RESOLVED_CONFIG_NAME).write_text(_dump_json(resolved))
    logger.info(f"Resolved config: {json.dumps(resolved, sort_keys=True)}")

    exit_code = 0
    try:
        result = dispatch(config)
        if not result.converged:
            exit_code = 2
    except ValidationError as e:
        _write_error(output_dir, ErrorReport(error_type="InvalidInput", message=str(e), field=_error_field(e)))
        return 1
    except (InvalidInput, AssumptionViolated) as e:
        _write_error(output_dir, ErrorReport(error_type=type(e).__name__, message=str(e)))
        return 1
    except NoConvergence as e:
        logger.warning(f"Run did not converge: {str(e)}")
        _write_error(output_dir, ErrorReport(error_type="NoConvergence", message=str(e), exit_code=2))
        result = CommandResult(artifacts=_partial_artifacts(e), verdicts={"converged": False}, converged=False)
        exit_code = 2
    except NumericalFailure as e:
        logger.warning(f"Numerical failure: {str(e)}")
        _write_error(output_dir, ErrorReport(error_type="NumericalFailure", message=str(e), exit_code=2))
        result = CommandResult(verdicts={"numerical_failure": str(e)}, converged=False)
        exit_code = 2
    except Exception as e:
        logger.error(f"Unexpected failure: {str(e)}", exc_info=True)
        _write_error(output_dir, ErrorReport(error_type=type(e).__name__, message=str(e), exit_code=2))
        result = CommandResult(verdicts={"unexpected_error": type(e).__name__}, converged=False)
        exit_code = 2

    records = [write_artifact(output_dir, name, artifact) for name, artifact in result.artifacts.items()]
    logger.info(f"Artifacts: {[r.name for r in records]}")

    manifest = RunManifest(
        command=config.command.value,
        config_echo=resolved,
        input_hash=_git_hash({k: v for k, v in resolved.items() if k not in ("output_dir", "threads")}),
        wall_time_seconds=time.perf_counter() - start_time,
        artifacts=records,
        verdicts=_plain(result.verdicts),
        exit_code=exit_code,
    )
    _write_manifest(output_dir, manifest)
    logger.debug(f"Solver metrics: {metrics_snapshot()}")
    return exit_code


def _load_manifest(source: Union[str, Path, RunManifest]) -> RunManifest:
    if isinstance(source, RunManifest):
        return source
    path = Path(source)
    if path.is_dir():
        path = path / MANIFEST_NAME
    try:
        return RunManifest.model_validate_json(path.read_text())
    except FileNotFoundError:
        raise InvalidInput(f"manifest not found: {path}")


def _replay_view(echo: Dict[str, Any]) -> Dict[str, Any]:
    view = {k: v for k, v in echo.items() if k not in REPLAY_IGNORED}
    if isinstance(view.get("solver"), dict):
        view["solver"] = {k: v for k, v in view["solver"].items() if k != "seed"}
    return view


def replay_check(manifest_a: Union[str, Path, RunManifest], manifest_b: Union[str, Path, RunManifest]) -> ReplayResult:
    """
    Compare two runs' numeric artifacts bit for bit.

    Seeds, thread counts and output directories may differ; anything else in the
    configs may not.

    Raises:
        InvalidInput: If the configs differ beyond seed, threads and output directory
    """
    a, b = _load_manifest(manifest_a), _load_manifest(manifest_b)
    if _replay_view(a.config_echo) != _replay_view(b.config_echo):
        raise InvalidInput("manifests come from different configs")

    digests_b = {r.name: r for r in b.artifacts if r.numeric}
    for record in (r for r in a.artifacts if r.numeric):
        other = digests_b.pop(record.name, None)
        if other is None or other.sha256 != record.sha256:
            return ReplayResult(identical=False, first_difference=record.name)
    if digests_b:
        return ReplayResult(identical=False, first_difference=sorted(digests_b)[0])
    return ReplayResult(identical=True)


def _read_config(path: str) -> Dict[str, Any]:
    try:
        with open(path) as f:
            return json.load(f)
    except FileNotFoundError:
        raise InvalidInput(f"config file not found: {path}")
    except json.JSONDecodeError as e:
        raise InvalidInput(f"config is not valid JSON: {str(e)}")


def main(argv: Optional[List[str]] = None) -> int:
    parser = argparse.ArgumentParser(description="Distributional competition experiments")
    parser.add_argument("command", choices=[c.value for c in Command] + ["replay"],
                        help="Experiment to run, or 'replay' to compare two manifests")
    parser.add_argument("--config", help="Path to the JSON experiment config")
    parser.add_argument("--out", help="Output directory (overrides output_dir)")
    parser.add_argument("--seed", type=int, help="Seed for stochastic paths")
    parser.add_argument("--threads", type=int, help="Concurrent sub-solves of sweeps")
    parser.add_argument("--grid", type=int, help="Grid size M")
    parser.add_argument("--manifests", nargs=2, metavar="MANIFEST", help="Two manifests or run directories to replay")

    args = parser.parse_args(argv)
    setup_logging("distcomp", log_dir=settings.LOG_DIR)

    if args.command == "replay":
        if not args.manifests:
            parser.error("replay needs --manifests A B")
        try:
            outcome = replay_check(*args.manifests)
        except InvalidInput as e:
            print(json.dumps({"error_type": "InvalidInput", "message": str(e)}))
            return 1
        print(json.dumps({"identical": outcome.identical, "first_difference": outcome.first_difference}))
        return 0 if outcome else 2

    if not args.config:
        parser.error("--config is required")

    output_dir = Path(args.out or "results")
    try:
        data = _read_config(args.config)
        output_dir = Path(args.out or data.get("output_dir", "results"))
        config = resolve_config(data, args.command, args.out, args.seed, args.threads, args.grid)
    except ValidationError as e:
        output_dir.mkdir(parents=True, exist_ok=True)
        _write_error(output_dir, ErrorReport(error_type="InvalidInput", message=str(e), field=_error_field(e)))
        return 1
    except InvalidInput as e:
        output_dir.mkdir(parents=True, exist_ok=True)
        _write_error(output_dir, ErrorReport(error_type="InvalidInput", message=str(e)))
        return 1

    return run(config)


if __name__ == "__main__":
    sys.exit(main())
