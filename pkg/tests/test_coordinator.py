import math

import numpy as np
import pytest

from intersection.config import CheckSettings, MotionSettings, RunSettings, ScenarioConfig
from intersection.coordinator import Coordinator, EventLog, VehicleRecord, run, thinning_stats
from intersection.errors import AssumptionError, ContractViolation
from intersection.lp import LpEngine
from intersection.model import LaneId, VehicleParams


def quiet_config(**run_settings):
    return ScenarioConfig(
        run=RunSettings(horizon=10.0, **run_settings),
        motion=MotionSettings(n_steps=20),
        checks=CheckSettings(record_trajectories=True),
    )


def test_lone_vehicle_crosses_at_free_flow():
    coordinator = Coordinator(quiet_config())
    outcome = coordinator.on_arrival(LaneId.ONE, 0.0)
    assert outcome.accepted
    assert outcome.schedule_time == pytest.approx(0.0)
    log = coordinator.finish()
    record = log.records[0]
    assert record.crossing_time == pytest.approx(5.0, abs=1e-6)
    assert record.exit_time == pytest.approx(5.3, abs=1e-6)
    assert record.delay == pytest.approx(0.0, abs=1e-6)
    assert record.wait == pytest.approx(0.0)


def test_crossing_vehicle_waits_for_switchover():
    coordinator = Coordinator(quiet_config())
    coordinator.on_arrival(LaneId.ONE, 0.0)
    second = coordinator.on_arrival(LaneId.TWO, 0.05)
    # service 0.2 s, then a 0.1 s switchover
    assert second.schedule_time == pytest.approx(0.3)
    log = coordinator.finish()
    late = log.records[1]
    assert late.wait == pytest.approx(0.25)
    assert late.delay == pytest.approx(0.25, abs=1e-6)
    assert late.delay <= late.wait + 1e-6
    assert log.collision_failures == 0
    assert log.collision_checks > 0


def test_vehicle_that_cannot_brake_in_time_is_diverted():
    coordinator = Coordinator(quiet_config())
    coordinator.on_arrival(LaneId.ONE, 0.0)
    outcome = coordinator.on_arrival(LaneId.ONE, 0.05)
    assert not outcome.accepted
    log = coordinator.finish()
    assert [r.diverted for r in log.records] == [False, True]
    assert len(log.accepted()) == 1


def test_short_control_region_needs_override():
    short = VehicleParams(L=40.0)
    with pytest.raises(AssumptionError):
        Coordinator(ScenarioConfig(params=short))
    Coordinator(ScenarioConfig(params=short, run=RunSettings(assumption_override=True)))


def test_arrivals_must_move_forward():
    coordinator = Coordinator(quiet_config())
    coordinator.on_arrival(LaneId.ONE, 1.0)
    with pytest.raises(ContractViolation):
        coordinator.on_arrival(LaneId.TWO, 0.5)


def test_recorded_segments_give_the_realized_path():
    coordinator = Coordinator(quiet_config())
    coordinator.on_arrival(LaneId.ONE, 0.0)
    coordinator.on_arrival(LaneId.TWO, 0.05)
    log = coordinator.finish()
    # crossing at 5.3, then cruising past the end of the plan
    positions, velocities = log.records[1].realized(np.array([0.05, 5.3, 5.6]))
    assert positions == pytest.approx([-50.0, 0.0, 3.0], abs=1e-6)
    assert velocities[2] == pytest.approx(10.0)


def test_realized_path_needs_segments():
    record = VehicleRecord(id=0, lane=LaneId.ONE, t_arrival=0.0, diverted=False)
    with pytest.raises(ContractViolation):
        record.realized([0.0])


def test_thinning_stats():
    log = EventLog(params=VehicleParams(), horizon=10.0, seed=0, records=[
        VehicleRecord(id=0, lane=LaneId.ONE, t_arrival=0.0, diverted=False, delay=0.0, wait=0.0),
        VehicleRecord(id=1, lane=LaneId.ONE, t_arrival=0.1, diverted=True),
        VehicleRecord(id=2, lane=LaneId.TWO, t_arrival=0.2, diverted=False, delay=0.4, wait=0.5),
    ])
    stats = thinning_stats(log)
    assert stats.theta[LaneId.ONE] == pytest.approx(0.1)
    assert stats.theta[LaneId.TWO] == 0.0
    assert stats.total_served == pytest.approx(0.2)
    assert stats.theta_fraction == pytest.approx(1.0 / 3.0)
    assert log.mean_delay == pytest.approx(0.2)
    with pytest.raises(ContractViolation):
        thinning_stats(log, horizon=0.0)


def test_explicit_arrivals_drive_the_run():
    config = quiet_config()
    log = run(config, {LaneId.ONE: [0.0, 1.0], LaneId.TWO: [0.5]})
    assert [r.lane for r in log.records] == [LaneId.ONE, LaneId.TWO, LaneId.ONE]
    assert all(not r.diverted for r in log.records)
    assert all(r.delay <= r.wait + 1e-6 for r in log.records)


def test_short_random_run_is_safe(make_scenario):
    log = run(make_scenario(rate=0.8, horizon=8.0, seed=3))
    assert log.collision_failures == 0
    assert log.delay_bound_violations == 0
    assert log.regularity_violations == 0
    assert all(r.delay >= -1e-6 for r in log.accepted())
    assert thinning_stats(log).total_served <= 1.02 / log.params.service_time


def test_runs_are_reproducible(make_scenario):
    config = make_scenario(rate=0.6, horizon=5.0, seed=9)
    first, second = run(config), run(config)
    assert [(r.id, r.diverted) for r in first.records] == [(r.id, r.diverted) for r in second.records]
    assert np.array_equal(first.delays(), second.delays())


@pytest.mark.slow
@pytest.mark.parametrize("rate", [0.5, 1.5, 2.3])
def test_default_parameters_are_collision_free(rate, make_scenario):
    config = make_scenario(rate=rate, horizon=200.0, seed=1, n_steps=800, engine=LpEngine.HIGHS)
    log = run(config)
    assert log.collision_failures == 0
    assert log.delay_bound_violations == 0


@pytest.mark.slow
def test_truncation_and_membership_hold(make_scenario):
    log = run(make_scenario(rate=1.5, horizon=60.0, seed=2, n_steps=60,
                            check_truncation=True, fail_fast=False))
    assert log.truncation_checks > 0
    assert log.truncation_violations == 0
    assert log.membership_violations == 0
    assert not math.isnan(log.mean_delay)



@pytest.mark.slow
@pytest.mark.parametrize("intensity", [2.3, 2.45])
def test_dense_platoons_stay_plannable(intensity):
    config = ScenarioConfig(
        lanes={1: {"intensity": intensity}, 2: {"intensity": intensity}},
        run=RunSettings(horizon=60.0, seed=0),
        motion=MotionSettings(n_steps=800, engine=LpEngine.HIGHS),
        checks=CheckSettings(fail_fast=False),
    )
    log = run(config)
    assert len(log.accepted()) > 200
    assert log.collision_failures == 0
    assert log.delay_bound_violations == 0
