import hashlib
import json

import pandas as pd
import pytest

from distcomp.cli import (
    ERROR_NAME,
    HANDLERS,
    MANIFEST_NAME,
    RESOLVED_CONFIG_NAME,
    main,
    replay_check,
    resolve_config,
    run,
)
from distcomp.core.validation import InvalidInput
from distcomp.models.schemas import Command, RunManifest

QUADRATIC_COST = {
    "kind": "separable",
    "gamma": {"form": "power", "a": 2.0, "p": 1.0},
    "beta": {"form": "affine", "a": 0.0, "b": 0.0},
}


def compare_config(out, seed=0, **overrides):
    data = {
        "command": "compare-prizes",
        "spec": {"v": [0.5, 0.5, 0.0], "w": [1.0, 0.0, 0.0], "cost": QUADRATIC_COST},
        "output_dir": str(out),
        "seed": seed,
        "grid": 201,
    }
    data.update(overrides)
    return data


def load_manifest(out):
    return RunManifest.model_validate_json((out / MANIFEST_NAME).read_text())


def test_compare_prizes_run_writes_manifest(tmp_out):
    assert run(resolve_config(compare_config(tmp_out))) == 0
    manifest = load_manifest(tmp_out)
    assert manifest.exit_code == 0
    assert manifest.verdicts["icx_dominates"] is True
    names = [a.name for a in manifest.artifacts]
    assert names == ["compare_cdf.csv", "compare_quantiles.csv", "compare_summary.json"]
    assert (tmp_out / RESOLVED_CONFIG_NAME).exists()

    cdfs = pd.read_csv(tmp_out / "compare_cdf.csv")
    assert list(cdfs.columns) == ["x", "F_v", "F_w"]
    assert len(cdfs) == 201
    summary = json.loads((tmp_out / "compare_summary.json").read_text())
    assert summary["icx_dominates"] is True


def test_artifact_digests_match_files(tmp_out):
    run(resolve_config(compare_config(tmp_out)))
    for record in load_manifest(tmp_out).artifacts:
        assert hashlib.sha256((tmp_out / record.name).read_bytes()).hexdigest() == record.sha256


def test_seed_is_copied_into_solver():
    config = resolve_config(compare_config("unused", seed=9))
    assert config.solver.seed == 9
    with pytest.raises(InvalidInput):
        resolve_config(compare_config("unused"), command="validate-cost")


def test_replay_is_identical_across_seeds(tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    assert run(resolve_config(compare_config(a, seed=1))) == 0
    assert run(resolve_config(compare_config(b, seed=2, threads=3))) == 0
    outcome = replay_check(a, b)
    assert outcome.identical
    assert outcome.first_difference is None


def test_replay_rejects_different_configs(tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    run(resolve_config(compare_config(a)))
    run(resolve_config(compare_config(b, grid=101)))
    with pytest.raises(InvalidInput):
        replay_check(a, b)
    with pytest.raises(InvalidInput):
        replay_check(a, tmp_path / "missing")


def test_invalid_prizes_exit_one_without_manifest(tmp_out):
    config = resolve_config(compare_config(tmp_out, spec={"v": [1.0, 0.0, 0.0], "w": [0.5, 0.5, 0.0],
                                                          "cost": QUADRATIC_COST}))
    assert run(config) == 1
    error = json.loads((tmp_out / ERROR_NAME).read_text())
    assert error["error_type"] == "InvalidInput"
    assert not (tmp_out / MANIFEST_NAME).exists()


def test_schema_errors_name_the_field(tmp_out):
    config = resolve_config(compare_config(tmp_out, spec={"v": [0.5, 0.5, 0.0], "cost": QUADRATIC_COST}))
    assert run(config) == 1
    error = json.loads((tmp_out / ERROR_NAME).read_text())
    assert error["field"] == "w"


def test_validate_cost_reports_violation_but_succeeds(tmp_out):
    config = resolve_config({
        "command": "validate-cost",
        "spec": {"cost": {**QUADRATIC_COST, "gamma": {"form": "power", "a": 1.0, "p": 1.0}},
                 "pi_bar": 1.0, "eta1": 0.1, "trial_count": 4},
        "output_dir": str(tmp_out),
    })
    assert run(config) == 0
    manifest = load_manifest(tmp_out)
    assert manifest.verdicts["passed"] is False
    assert manifest.verdicts["first_violation"].startswith("margin")


def test_uncertified_distribution_exits_two(tmp_out):
    uniform = {"grid": [i / 10 for i in range(11)], "weights": [1.0 / 11] * 11}
    config = resolve_config({
        "command": "verify-kkt",
        "spec": {"prize": {"kind": "rank_order", "n": 2, "prizes": [1.0, 0.0]},
                 "cost": QUADRATIC_COST, "distribution": uniform},
        "output_dir": str(tmp_out),
    })
    assert run(config) == 2
    manifest = load_manifest(tmp_out)
    assert manifest.exit_code == 2
    assert manifest.verdicts["converged"] is False
    assert "phi" in pd.read_csv(tmp_out / "kkt_distribution.csv").columns


def test_no_convergence_writes_partial_artifacts(tmp_out):
    config = resolve_config({
        "command": "solve-contest",
        "spec": {"prizes": [1.0, 0.0], "cost": QUADRATIC_COST},
        "solver": {"method": "mirror_prox", "max_iter": 1, "kkt_tol": 1e-9},
        "output_dir": str(tmp_out),
        "grid": 41,
    })
    assert run(config) == 2
    assert (tmp_out / "partial_distribution.csv").exists()
    assert json.loads((tmp_out / ERROR_NAME).read_text())["error_type"] == "NoConvergence"
    assert load_manifest(tmp_out).exit_code == 2


def test_main_runs_and_replays(tmp_path):
    config_path = tmp_path / "compare.json"
    config_path.write_text(json.dumps(compare_config(tmp_path / "ignored")))
    a, b = tmp_path / "a", tmp_path / "b"
    assert main(["compare-prizes", "--config", str(config_path), "--out", str(a), "--seed", "4"]) == 0
    assert main(["compare-prizes", "--config", str(config_path), "--out", str(b)]) == 0
    assert load_manifest(a).config_echo["seed"] == 4
    assert main(["replay", "--manifests", str(a), str(b / MANIFEST_NAME)]) == 0


def test_main_rejects_mismatched_command(tmp_path):
    config_path = tmp_path / "compare.json"
    config_path.write_text(json.dumps(compare_config(tmp_path / "out")))
    assert main(["validate-cost", "--config", str(config_path)]) == 1
    assert (tmp_path / "out" / ERROR_NAME).exists()
    assert main(["solve-contest", "--config", str(tmp_path / "missing.json"), "--out", str(tmp_path / "x")]) == 1


RACE_COST = {
    "kind": "tail_local",
    "kappa": {"form": "tail", "h": {"form": "exp_decay", "a": 1.0, "r": 2.0},
              "g": {"form": "affine", "a": 1.2, "b": 0.3}, "base": 0.05},
    "c_inf": 0.05,
}
MARKET_COST = {"kind": "linear", "c": {"form": "power", "a": 1.0, "p": 1.0}, "steepness": 1.0}
RACE_SOLVER = {"kkt_tol": 5e-3, "max_iter": 3000}
MARKET_SOLVER = {"kkt_tol": 5e-3, "max_iter": 2000, "start": "point_mass_zero"}

COMMAND_CONFIGS = {
    "solve-contest": {"spec": {"prizes": [1.0, 0.0], "cost": QUADRATIC_COST}, "grid": 41},
    "compare-prizes": {"spec": {"v": [0.5, 0.5, 0.0], "w": [1.0, 0.0, 0.0], "cost": QUADRATIC_COST}, "grid": 41},
    "entry-sweep": {
        "spec": {"kappa": {"form": "product", "f": {"form": "power", "a": 1.0, "p": 1.0},
                           "g": {"form": "affine", "a": 1.0, "b": 1.0}},
                 "n_list": [2, 3], "q_points": 101},
        "grid": 41,
    },
    "solve-race": {"spec": {"n": 2, "cost": RACE_COST}, "solver": RACE_SOLVER, "grid": 41},
    "solve-quality": {
        "spec": {"n": 2, "mode": "quality", "demand": {"form": "power", "a": 1.0, "p": 1.0}, "cost": RACE_COST},
        "solver": RACE_SOLVER,
        "grid": 41,
    },
    "solve-market": {"spec": {"n": 2, "sigma": 0.5, "cost": MARKET_COST}, "solver": MARKET_SOLVER, "grid": 11},
    "market-limit-sweep": {
        "spec": {"n_list": [2, 3], "sigma": 0.5, "cost": MARKET_COST},
        "solver": MARKET_SOLVER,
        "grid": 11,
    },
    "verify-kkt": {
        "spec": {"prize": {"kind": "rank_order", "n": 2, "prizes": [1.0, 0.0]}, "cost": QUADRATIC_COST},
        "grid": 41,
    },
    "validate-cost": {"spec": {"cost": QUADRATIC_COST, "pi_bar": 1.0, "eta1": 0.5, "trial_count": 4}},
}


@pytest.mark.parametrize("command", sorted(COMMAND_CONFIGS))
def test_every_command_replays_byte_for_byte(command, tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    base = {"command": command, "seed": 3, **COMMAND_CONFIGS[command]}
    code_a = run(resolve_config({**base, "output_dir": str(a), "threads": 1}))
    code_b = run(resolve_config({**base, "output_dir": str(b), "threads": 4}))
    assert code_a == code_b
    assert replay_check(a, b).identical
    records = load_manifest(a).artifacts
    assert records
    for record in records:
        assert (a / record.name).read_bytes() == (b / record.name).read_bytes()


def test_unexpected_failure_exits_two_with_error_report(tmp_out, mocker):
    def broken(config, spec):
        raise RuntimeError("boom")

    mocker.patch.dict(HANDLERS, {Command.VALIDATE_COST: broken})
    config = resolve_config({
        "command": "validate-cost",
        "spec": {"cost": QUADRATIC_COST, "pi_bar": 1.0, "eta1": 0.5, "trial_count": 4},
        "output_dir": str(tmp_out),
    })
    assert run(config) == 2
    error = json.loads((tmp_out / ERROR_NAME).read_text())
    assert error["error_type"] == "RuntimeError"
    assert error["exit_code"] == 2
    manifest = load_manifest(tmp_out)
    assert manifest.exit_code == 2
    assert manifest.verdicts["unexpected_error"] == "RuntimeError"
    assert manifest.artifacts == []
