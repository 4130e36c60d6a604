import math

import numpy as np
import pytest

from intersection.config import CheckSettings, MotionSettings, RunSettings, ScenarioConfig
from intersection.coordinator import run
from intersection.model import LaneId
from intersection.reporting import (
    SUMMARY_COLUMNS,
    SWEEP_COLUMNS,
    VEHICLE_COLUMNS,
    format_value,
    read_rows,
    schema_of,
    trajectory_rows,
    write_run,
    write_sweep,
)


@pytest.fixture
def small_log():
    config = ScenarioConfig(
        run=RunSettings(horizon=2.0),
        motion=MotionSettings(n_steps=20),
        checks=CheckSettings(record_trajectories=True),
    )
    return run(config, {LaneId.ONE: [0.0, 0.05], LaneId.TWO: [0.05]})


@pytest.mark.parametrize("value, text", [
    (None, ""),
    (math.nan, ""),
    (True, "true"),
    (False, "false"),
    (3, "3"),
    (np.int64(7), "7"),
    (0.25, "0.25"),
    (1.0 / 3.0, "0.3333333333"),
    (math.inf, "inf"),
    (-math.inf, "-inf"),
    ("total", "total"),
])
def test_format_value(value, text):
    assert format_value(value) == text


def test_run_files(small_log, tmp_path):
    paths = write_run(tmp_path, small_log, "abc123", trajectories=True, sample_dt=0.5)
    assert [p.name for p in paths] == ["vehicles.csv", "summary.csv", "trajectories.csv"]
    assert schema_of(tmp_path / "vehicles.csv") == "vehicles/v1"
    assert schema_of(tmp_path / "summary.csv") == "summary/v1"

    vehicles = read_rows(tmp_path / "vehicles.csv")
    assert list(vehicles[0]) == VEHICLE_COLUMNS
    assert [row["diverted"] for row in vehicles] == ["false", "true", "false"]
    # diverted vehicles leave their timing cells empty
    assert vehicles[1]["delay_s"] == ""

    summary = read_rows(tmp_path / "summary.csv")
    assert list(summary[0]) == SUMMARY_COLUMNS
    assert [row["lane"] for row in summary] == ["1", "2", "total"]
    total = summary[-1]
    assert total["arrivals"] == "3"
    assert total["diverted"] == "1"
    assert total["config_hash"] == "abc123"
    assert float(total["theta_fraction"]) == pytest.approx(1.0 / 3.0)


def test_trajectory_rows_cover_the_stay(small_log):
    rows = trajectory_rows(small_log, 0.5)
    first = [row for row in rows if row["id"] == 0]
    # 0 to 5.3 s at 0.5 s spacing
    assert len(first) == 11
    assert first[0]["x_m"] == pytest.approx(-50.0)
    assert first[-1]["t_s"] == pytest.approx(5.0)
    assert {row["id"] for row in rows} == {0, 2}


def test_run_without_trajectories(small_log, tmp_path):
    paths = write_run(tmp_path, small_log, "abc123")
    assert len(paths) == 2
    assert not (tmp_path / "trajectories.csv").exists()


def test_sweep_file(tmp_path):
    rows = [
        {"axis": "lambda", "value": 0.5, "seed": 0, "mean_delay_s": 0.1, "delay_ratio": math.inf},
        {"axis": "lambda", "value": 1.0, "seed": 0, "mean_delay_s": 0.2, "polling_mean_wait_s": 0.3,
         "conjecture_delay_le_polling_wait": True},
    ]
    path = write_sweep(tmp_path, rows)
    assert schema_of(path) == "sweep/v1"
    read = read_rows(path)
    assert list(read[0]) == SWEEP_COLUMNS
    assert read[0]["delay_ratio"] == "inf"
    assert read[0]["polling_mean_wait_s"] == ""
    assert read[1]["conjecture_delay_le_polling_wait"] == "true"
