from pathlib import Path

import pytest

from intersection.arrivals import ArrivalKind
from intersection.config import (
    EnvironmentSettings,
    ExperimentConfig,
    SweepAxis,
    config_hash,
    load_config,
    parse_config,
)
from intersection.errors import ConfigError
from intersection.lp import LpEngine
from intersection.model import LaneId
from intersection.polling import PolicyKind

PRESETS = sorted((Path(__file__).parent.parent / "configs").glob("*.toml"))


def test_empty_document_gives_defaults():
    config = parse_config("")
    scenario = config.scenario
    assert scenario.params.L == 50.0
    assert scenario.policy.kind is PolicyKind.EXHAUSTIVE
    assert scenario.run.initial_queue is None
    assert scenario.motion.engine is LpEngine.HIGHS
    assert set(scenario.lane_specs()) == {LaneId.ONE, LaneId.TWO}
    assert config.sweep is None


def test_dotted_keys_and_lambda_alias():
    config = parse_config(
        'params.L = 60.0\n'
        'lanes.1.lambda = 2.0\n'
        'lanes.2.kind = "poisson"\n'
        'lanes.2.rate = 0.3\n'
        'policy.kind = "k_limited"\n'
        'policy.k = 4\n'
        'run.initial_queue = 2\n'
    )
    scenario = config.scenario
    assert scenario.params.L == 60.0
    specs = scenario.lane_specs()
    assert specs[LaneId.ONE].rate == 2.0
    assert specs[LaneId.TWO].kind is ArrivalKind.POISSON
    assert scenario.policy.label == "k_limited(4)"
    assert scenario.run.initial_queue is LaneId.TWO


def test_syntax_error_reports_line():
    with pytest.raises(ConfigError) as info:
        parse_config("params.l = 2.0\nparams.w = = 1.0\n")
    assert info.value.line == 2
    assert "line 2" in str(info.value)


@pytest.mark.parametrize("text, field", [
    ("params.v_m = -1.0\n", "params.v_m"),
    ("run.horizon = 0\n", "run.horizon"),
    ("bogus = 1\n", "bogus"),
    ("lanes.3.rate = 1.0\n", "lanes"),
    ('policy.kind = "k_limited"\n', "policy"),
    ("motion.n_steps = 0\n", "motion.n_steps"),
])
def test_validation_errors_name_the_field(text, field):
    with pytest.raises(ConfigError) as info:
        parse_config(text)
    assert info.value.field == field


def test_hard_core_must_cover_service_time():
    with pytest.raises(ConfigError):
        parse_config("lanes.1.hard_core_b = 0.1\n")
    config = parse_config("lanes.1.hard_core_b = 0.3\n")
    assert config.scenario.lane_specs()[LaneId.ONE].effective_b(0.2) == 0.3


def test_sweep_points():
    config = parse_config(
        'light.green_red_duration = 10.0\n'
        'sweep.axis = "lambda"\n'
        'sweep.values = [0.5, 1.0]\n'
        'sweep.seeds = [0, 1]\n'
    )
    assert config.sweep.axis is SweepAxis.LAMBDA
    scenario, light = config.point(1.0, 1)
    assert all(spec.rate == 1.0 for spec in scenario.lane_specs().values())
    assert scenario.seed == 1
    assert light.green_red_duration == 10.0


def test_length_and_green_axes():
    length = parse_config('sweep.axis = "L"\nsweep.values = [70.0]\n')
    scenario, _ = length.point(70.0, 0)
    assert scenario.params.L == 70.0

    green = parse_config('sweep.axis = "green"\nsweep.values = [5.0]\n')
    _, light = green.point(5.0, 0)
    assert light.green_red_duration == 5.0


def test_intensity_axis_converts_to_the_underlying_rate():
    config = parse_config('sweep.axis = "intensity"\nsweep.values = [2.45]\n')
    assert config.sweep.axis is SweepAxis.INTENSITY
    scenario, _ = config.point(2.45, 0)
    for spec in scenario.lane_specs().values():
        assert spec.intensity == 2.45
        assert spec.underlying_rate(0.2) == pytest.approx(9.78, abs=0.01)

    by_rate = parse_config('lanes.1.intensity = 2.0\nsweep.axis = "lambda"\nsweep.values = [1.5]\n')
    spec = by_rate.point(1.5, 0)[0].lane_specs()[LaneId.ONE]
    assert (spec.rate, spec.intensity) == (1.5, None)


def test_intensity_stays_below_the_hard_core_limit():
    assert parse_config("lanes.1.intensity = 2.45\n").scenario.lane_specs()[LaneId.ONE].intensity == 2.45
    with pytest.raises(ConfigError):
        parse_config("lanes.1.intensity = 2.5\n")
    with pytest.raises(ConfigError) as info:
        parse_config("lanes.1.rate = 1.0\nlanes.1.intensity = 1.0\n")
    assert info.value.field.startswith("lanes")


def test_point_needs_a_sweep():
    with pytest.raises(ConfigError):
        ExperimentConfig().point(1.0, 0)


def test_sweep_rejects_bad_values():
    with pytest.raises(ConfigError) as info:
        parse_config('sweep.axis = "lambda"\nsweep.values = [1.0]\nsweep.seeds = [3, 3]\n')
    assert info.value.field == "sweep.seeds"
    invalid = parse_config('sweep.axis = "L"\nsweep.values = [-5.0]\n')
    with pytest.raises(ConfigError):
        invalid.point(-5.0, 0)


def test_config_hash_is_stable():
    first = parse_config("run.seed = 3\n").scenario
    second = parse_config("run.seed = 3\n").scenario
    assert config_hash(first) == config_hash(second)
    assert len(config_hash(first)) == 16
    assert config_hash(first) != config_hash(first.with_seed(4))


def test_environment_settings(monkeypatch, tmp_path):
    monkeypatch.chdir(tmp_path)
    monkeypatch.setenv("INTERSECTION_JOBS", "3")
    monkeypatch.setenv("INTERSECTION_LP_ENGINE", "SIMPLEX")
    monkeypatch.setenv("INTERSECTION_LOG_LEVEL", "debug")
    env = EnvironmentSettings.from_env()
    assert env.jobs == 3
    assert env.lp_engine is LpEngine.SIMPLEX
    assert env.log_level == "DEBUG"

    assert parse_config("", env).scenario.motion.engine is LpEngine.SIMPLEX
    assert parse_config('motion.engine = "highs"\n', env).scenario.motion.engine is LpEngine.HIGHS


def test_environment_rejects_bad_values(monkeypatch, tmp_path):
    monkeypatch.chdir(tmp_path)
    monkeypatch.setenv("INTERSECTION_JOBS", "many")
    with pytest.raises(ConfigError):
        EnvironmentSettings.from_env()
    monkeypatch.setenv("INTERSECTION_JOBS", "1")
    monkeypatch.setenv("INTERSECTION_LP_ENGINE", "glpk")
    with pytest.raises(ConfigError):
        EnvironmentSettings.from_env()


def test_load_config(write_config, tmp_path):
    path = write_config("""
        run.horizon = 30.0
        output_dir = "out"
    """)
    config = load_config(str(path))
    assert config.scenario.run.horizon == 30.0
    assert config.output_dir == "out"
    with pytest.raises(ConfigError):
        load_config(str(tmp_path / "missing.toml"))


@pytest.mark.parametrize("path", PRESETS, ids=lambda p: p.name)
def test_presets_parse(path):
    config = load_config(str(path))
    assert config.scenario.params.meets_length_assumption
