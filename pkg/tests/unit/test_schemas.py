import pytest
from freezegun import freeze_time
from pydantic import ValidationError

from distcomp.models.schemas import (
    Command,
    ComparePrizesSpec,
    ContestCommandSpec,
    CostSpec,
    EntrySweepSpec,
    ErrorReport,
    ExperimentConfig,
    PrizeModel,
    RunManifest,
    SolverConfig,
)


@pytest.fixture
def compare_config():
    return {
        "schema_version": "1.0",
        "command": "compare-prizes",
        "spec": {
            "v": [0.5, 0.5, 0.0],
            "w": [1.0, 0.0, 0.0],
            "cost": {"kind": "separable", "gamma": {"form": "power", "a": 2.0, "p": 1.0},
                     "beta": {"form": "affine", "a": 0.0, "b": 0.0}},
        },
    }


def test_experiment_config_dispatches_spec_model(compare_config):
    config = ExperimentConfig.model_validate(compare_config)
    assert config.command == Command.COMPARE_PRIZES
    spec = config.command_spec()
    assert isinstance(spec, ComparePrizesSpec)
    assert spec.w == [1.0, 0.0, 0.0]


def test_defaults_come_from_settings(compare_config):
    config = ExperimentConfig.model_validate(compare_config)
    assert config.grid == 201
    assert config.threads >= 1
    assert config.solver.kkt_tol == pytest.approx(1e-3)


def test_unknown_fields_are_rejected(compare_config):
    with pytest.raises(ValidationError):
        ExperimentConfig.model_validate({**compare_config, "gird": 51})
    with pytest.raises(ValidationError):
        ExperimentConfig.model_validate({**compare_config, "schema_version": "0.9"})


def test_command_spec_errors_surface_on_demand(compare_config):
    broken = dict(compare_config, spec={"v": [1.0, 0.0]})
    config = ExperimentConfig.model_validate(broken)
    with pytest.raises(ValidationError):
        config.command_spec()


def test_cost_spec_requires_kind_fields():
    with pytest.raises(ValidationError):
        CostSpec.model_validate({"kind": "separable", "gamma": {"form": "power"}})
    with pytest.raises(ValidationError):
        CostSpec.model_validate({"kind": "linear", "c": {"form": "cubic"}})


def test_solver_config_is_frozen():
    cfg = SolverConfig()
    with pytest.raises(ValidationError):
        cfg.kkt_tol = 1.0
    with pytest.raises(ValidationError):
        SolverConfig(damping=0.0)


def test_prize_model_checks_prizes():
    with pytest.raises(ValidationError):
        PrizeModel(kind="rank_order", n=3, prizes=[1.0, 0.0])
    with pytest.raises(ValidationError):
        PrizeModel(kind="custom", n=2)
    assert PrizeModel(kind="min_race", n=2, r=0.5).r == 0.5


def test_entry_sweep_needs_ascending_n():
    kappa = {"form": "sum", "f": {"form": "power"}, "g": {"form": "affine"}}
    with pytest.raises(ValidationError):
        EntrySweepSpec(kappa=kappa, n_list=[3, 2])
    assert EntrySweepSpec(kappa=kappa, n_list=[2, 3]).q_points == 1001


def test_contest_spec_example_validates():
    example = ContestCommandSpec.model_config["json_schema_extra"]["example"]
    assert ContestCommandSpec.model_validate(example).general_solver is True


def test_manifest_exit_code_range():
    with pytest.raises(ValidationError):
        RunManifest(command="verify-kkt", config_echo={}, input_hash="x", wall_time_seconds=0.0, exit_code=3)
    manifest = RunManifest(command="verify-kkt", config_echo={}, input_hash="x", wall_time_seconds=0.0, exit_code=0)
    assert manifest.timestamp.tzinfo is not None


@freeze_time("2024-03-01 12:00:00")
def test_error_report_is_stamped_in_utc():
    report = ErrorReport(error_type="NoConvergence", message="stalled", exit_code=2)
    assert report.timestamp.isoformat() == "2024-03-01T12:00:00+00:00"
    with pytest.raises(ValidationError):
        ErrorReport(error_type="InvalidInput", message="bad", exit_code=0)
