import math

import numpy as np
import pytest

from intersection.errors import ContractViolation
from intersection.lp import LpEngine, LpStatus
from intersection.model import State, Trajectory
from intersection.motion import (
    FeasibleSetParams,
    FRegion,
    MotionProblem,
    build_program,
    entry_feasible,
    front_drift,
    in_F,
    minimum_arrival_time,
    motion_synthesize,
    safety_bounds,
    stop_position,
    truncation_gap,
)
from intersection.verification import dip_oracle


def entering(params, tf, n_steps=20, front=None, t0=0.0):
    return MotionProblem(initial_state=State(-params.L, params.v_m), t0=t0, tf=tf,
                         params=params, front=front, n_steps=n_steps)


def test_minimum_arrival_time(params):
    assert minimum_arrival_time(State(-50.0, 10.0), params) == pytest.approx(5.0)
    assert minimum_arrival_time(State(-50.0, 0.0), params) == pytest.approx(6.25)
    assert math.isinf(minimum_arrival_time(State(-5.0, 0.0), params))


def test_problem_validation(params):
    with pytest.raises(ContractViolation):
        entering(params, tf=0.0)
    with pytest.raises(ContractViolation):
        MotionProblem(initial_state=State(1.0, 10.0), t0=0.0, tf=1.0, params=params)
    with pytest.raises(ContractViolation):
        entering(params, tf=5.0, n_steps=0)


def test_program_shape(params):
    program = build_program(entering(params, tf=5.0, n_steps=10))
    assert program.n_vars == 3 * 10 + 2
    assert program.n_eq == 2 * 10
    assert program.n_le == 0


def test_free_flow_is_cruise(params):
    result = motion_synthesize(entering(params, tf=5.0, n_steps=10))
    assert result.feasible
    traj = result.trajectory
    assert traj.positions == pytest.approx(-50.0 + 10.0 * traj.times(), abs=1e-7)
    assert traj.violations(params) == []


def test_too_early_is_infeasible(params):
    result = motion_synthesize(entering(params, tf=4.9))
    assert not result.feasible
    assert result.status is LpStatus.INFEASIBLE


@pytest.mark.parametrize("engine", [LpEngine.SIMPLEX, LpEngine.HIGHS])
def test_delayed_arrival_meets_terminal_conditions(params, engine):
    result = motion_synthesize(entering(params, tf=5.5, n_steps=25), engine=engine)
    assert result.feasible
    traj = result.trajectory
    assert traj.positions[-1] == 0.0
    assert traj.velocities[-1] == params.v_m
    assert traj.positions.max() <= 0.0
    assert traj.violations(params, eps_dyn=1e-6) == []
    assert traj.time_at_position(0.0) == pytest.approx(5.5, abs=1e-6)


def test_dip_matches_closed_form(params):
    result = motion_synthesize(entering(params, tf=5.2, n_steps=800), engine=LpEngine.HIGHS)
    assert result.feasible
    times = result.trajectory.times()
    expected = dip_oracle(times, 0.0, 0.2, params)
    assert np.abs(result.trajectory.positions - expected).max() <= 1e-3


def test_dip_oracle_shape(params):
    # the dip bottoms out at 10 - sqrt(8) m/s and lasts 2 * sqrt(0.5) s
    start = 5.2 - 2.0 * math.sqrt(0.5)
    assert start == pytest.approx(3.786, abs=1e-3)
    before, after = dip_oracle(np.array([start - 1.0, 5.2]), 0.0, 0.2, params)
    assert before == pytest.approx(-50.0 + 10.0 * (start - 1.0))
    assert after == pytest.approx(0.0)


def test_front_vehicle_bounds_the_follower(params):
    front = Trajectory.constant_speed(0.0, -45.0, 10.0, 10.0, n_steps=50)
    problem = entering(params, tf=5.5, n_steps=22, front=front)
    bounds = safety_bounds(problem)
    assert bounds.max() <= 0.0
    assert bounds[0] == pytest.approx(min(0.0, -45.0 + 10.0 * problem.dt - 2.0), abs=1e-8)

    result = motion_synthesize(problem)
    assert result.feasible
    y, _ = front.sample(result.trajectory.times())
    assert np.all(result.trajectory.positions <= np.minimum(0.0, y - params.l) + 1e-7)


def test_follower_behind_drifting_front_plan(params):
    # front cruises into the line but its interior nodes sit 5e-6 m behind the exact integral
    n = 40
    times = np.linspace(0.0, 5.0, n + 1)
    positions = -10.0 * (5.0 - times)
    positions[1:-1] -= 5e-6
    front = Trajectory(t0=0.0, dt=5.0 / n, positions=positions, velocities=np.full(n + 1, 10.0),
                       accelerations=np.zeros(n))
    assert front_drift(front) == pytest.approx(1e-5, rel=1e-3)

    result = motion_synthesize(entering(params, tf=5.2, n_steps=n, front=front, t0=0.2),
                               engine=LpEngine.HIGHS)
    assert result.feasible
    assert result.slack == pytest.approx(1e-5, rel=1e-3)
    y, _ = front.sample(result.trajectory.times())
    assert np.all(result.trajectory.positions <= y - params.l + result.slack + 1e-7)


def test_front_ahead_without_plan_yet_is_ignored(params):
    front = Trajectory.constant_speed(10.0, -40.0, 10.0, 4.0)
    problem = entering(params, tf=5.0, n_steps=10)
    assert np.all(safety_bounds(problem) == 0.0)
    assert np.all(safety_bounds(entering(params, tf=5.0, n_steps=10, front=front)) == 0.0)


def test_entry_feasibility(params):
    assert entry_feasible(None, 0.0, params)
    moving = Trajectory.constant_speed(0.0, -48.0, 10.0, 4.8, n_steps=48)
    assert entry_feasible(moving, 0.0, params)
    stopped = Trajectory.constant_speed(0.0, -49.0, 0.0, 10.0, n_steps=10)
    assert not entry_feasible(stopped, 0.0, params)
    far_stopped = Trajectory.constant_speed(0.0, -30.0, 0.0, 10.0, n_steps=10)
    assert entry_feasible(far_stopped, 0.0, params)
    # braking from -50 stops at -37.5, so the rear bumper must stay beyond it
    close_stopped = Trajectory.constant_speed(0.0, -36.0, 0.0, 10.0, n_steps=10)
    assert not entry_feasible(close_stopped, 0.0, params)


def test_entry_margin_is_extra_clearance(params):
    stopped = Trajectory.constant_speed(0.0, -35.4, 0.0, 10.0, n_steps=10)
    assert entry_feasible(stopped, 0.0, params)
    assert not entry_feasible(stopped, 0.0, params, margin=0.2)


def test_feasible_set_regions(params):
    fp = FeasibleSetParams(nu=1, params=params)
    assert fp.stop_limit == pytest.approx(-12.5)
    assert stop_position(State(-30.0, 10.0), params) == pytest.approx(-17.5)
    assert in_F(State(-30.0, 10.0), fp) is FRegion.INTERIOR
    assert in_F(State(-25.0, 10.0), fp) is FRegion.BOUNDARY
    assert in_F(State(-10.0, 10.0), fp) is FRegion.OUTSIDE
    assert FeasibleSetParams(nu=2, params=params).stop_limit == pytest.approx(-14.5)
    with pytest.raises(ContractViolation):
        FeasibleSetParams(nu=0, params=params)


def test_resolving_the_tail_reproduces_it(params):
    result = motion_synthesize(entering(params, tf=5.6, n_steps=28))
    gap = truncation_gap(result.trajectory, None, 1.0, params)
    assert gap <= 1e-4
