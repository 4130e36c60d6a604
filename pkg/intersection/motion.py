"""
Trajectory synthesis for the intersection simulator
Discretized double-integrator LP (maximize the summed positions so each
vehicle stays as close to the intersection as its schedule allows), the
maximal-braking entry test and the stop-then-go feasible-set predicate
"""

import logging
import math
from dataclasses import dataclass
from enum import Enum
from typing import Optional

import numpy as np
import scipy.sparse as sp

from intersection.errors import ContractViolation
from intersection.lp import LinearProgram, LpEngine, LpStatus, Pricing, solve
from intersection.model import EPS_BOUND, State, Trajectory, VehicleParams

logger = logging.getLogger(__name__)

DEFAULT_STEPS = 800
EPS_F = 1e-9
STATE_TOL = 1e-6


@dataclass(frozen=True)
class MotionProblem:
    """Reach x = 0 at ``tf`` with velocity v_m, starting from ``initial_state`` at ``t0``"""

    initial_state: State
    t0: float
    tf: float
    params: VehicleParams
    front: Optional[Trajectory] = None
    n_steps: int = DEFAULT_STEPS

    def __post_init__(self):
        if not self.tf > self.t0:
            raise ContractViolation(f"terminal time {self.tf} must follow start time {self.t0}")
        if self.n_steps < 1:
            raise ContractViolation(f"grid needs at least one step, got {self.n_steps}")
        p, v = self.initial_state.position, self.initial_state.velocity
        if not (-self.params.L - STATE_TOL <= p <= STATE_TOL):
            raise ContractViolation(f"initial position {p} outside [-L, 0]")
        if not (-STATE_TOL <= v <= self.params.v_m + STATE_TOL):
            raise ContractViolation(f"initial velocity {v} outside [0, v_m]")

    @property
    def dt(self) -> float:
        return (self.tf - self.t0) / self.n_steps


@dataclass
class MotionResult:
    status: LpStatus
    trajectory: Optional[Trajectory] = None
    objective: float = float("nan")
    slack: float = 0.0

    @property
    def feasible(self) -> bool:
        return self.trajectory is not None


def minimum_arrival_time(state: State, params: VehicleParams) -> float:
    """Earliest time to reach x = 0 at speed v_m from ``state``; inf if v_m cannot be reached"""
    gap = -state.position
    v0 = min(max(state.velocity, 0.0), params.v_m)
    ramp = (params.v_m ** 2 - v0 ** 2) / (2.0 * params.a_m)
    if ramp > gap + STATE_TOL:
        return math.inf
    return (params.v_m - v0) / params.a_m + max(gap - ramp, 0.0) / params.v_m


def front_drift(front: Optional[Trajectory]) -> float:
    """Accumulated trapezoid residual of the front plan (m); a follower at v_m cannot be held closer"""
    if front is None:
        return 0.0
    x, v = front.positions, front.velocities
    return float(np.abs(x[1:] - x[:-1] - 0.5 * (v[:-1] + v[1:]) * front.dt).sum())


def safety_slack(front: Optional[Trajectory]) -> float:
    return EPS_BOUND + front_drift(front)


def safety_bounds(problem: MotionProblem) -> np.ndarray:
    """Upper bounds on x_1..x_N from the front vehicle's rear bumper"""
    n = problem.n_steps
    bounds = np.zeros(n)
    if problem.front is None:
        return bounds
    times = problem.t0 + problem.dt * np.arange(1, n + 1)
    covered = times >= problem.front.t0
    if np.any(covered):
        y, _ = problem.front.sample(times[covered])
        bounds[covered] = np.minimum(0.0, y - problem.params.l + safety_slack(problem.front))
    return bounds
    times = problem.t0 + problem.dt * np.arange(1, n + 1)
    covered = times >= problem.front.t0
    if np.any(covered):
        y, _ = problem.front.sample(times[covered])
        bounds[covered] = np.minimum(0.0, y - problem.params.l + EPS_BOUND)
    return bounds


def build_program(problem: MotionProblem) -> LinearProgram:
    """Variables (x_0..x_N, v_0..v_N, u_0..u_{N-1}); only the dynamics are rows"""
    n = problem.n_steps
    dt = problem.dt
    p = problem.params
    ix = np.arange(n + 1)
    iv = n + 1 + np.arange(n + 1)
    iu = 2 * (n + 1) + np.arange(n)
    k = np.arange(n)

    # x_{i+1} - x_i - dt/2 (v_i + v_{i+1}) = 0
    pos_rows = np.repeat(k, 4)
    pos_cols = np.column_stack([ix[k + 1], ix[k], iv[k], iv[k + 1]]).ravel()
    pos_vals = np.tile([1.0, -1.0, -0.5 * dt, -0.5 * dt], n)
    # v_{i+1} - v_i - dt u_i = 0
    vel_rows = n + np.repeat(k, 3)
    vel_cols = np.column_stack([iv[k + 1], iv[k], iu[k]]).ravel()
    vel_vals = np.tile([1.0, -1.0, -dt], n)

    A_eq = sp.csr_matrix(
        (np.concatenate([pos_vals, vel_vals]),
         (np.concatenate([pos_rows, vel_rows]), np.concatenate([pos_cols, vel_cols]))),
        shape=(2 * n, 3 * n + 2),
    )

    x0 = problem.initial_state.position
    v0 = min(max(problem.initial_state.velocity, 0.0), p.v_m)
    lo = np.concatenate([np.full(n + 1, x0), np.zeros(n + 1), np.full(n, -p.a_m)])
    hi = np.concatenate([np.zeros(n + 1), np.full(n + 1, p.v_m), np.full(n, p.a_m)])
    hi[ix[1:]] = safety_bounds(problem)
    lo[ix[0]] = hi[ix[0]] = x0
    lo[ix[n]] = hi[ix[n]] = 0.0
    lo[iv[0]] = hi[iv[0]] = v0
    lo[iv[n]] = hi[iv[n]] = p.v_m

    objective = np.zeros(3 * n + 2)
    objective[ix] = 1.0
    return LinearProgram(objective=objective, A_eq=A_eq, b_eq=np.zeros(2 * n), lo=lo, hi=hi)


def motion_synthesize(problem: MotionProblem, engine: LpEngine = LpEngine.SIMPLEX,
                      pricing: Pricing = Pricing.BLAND) -> MotionResult:
    """Solve the trajectory LP and wrap the optimum as a Trajectory"""
    earliest = problem.t0 + minimum_arrival_time(problem.initial_state, problem.params)
    if problem.tf < earliest - 1e-9:
        return MotionResult(status=LpStatus.INFEASIBLE)

    program = build_program(problem)
    solution = solve(program, engine=engine, pricing=pricing)
    if not solution.optimal:
        logger.debug(f"motion LP on [{problem.t0:.4f}, {problem.tf:.4f}] -> {solution.status.value}")
        return MotionResult(status=solution.status)

    n = problem.n_steps
    p = problem.params
    x = np.minimum(solution.x[: n + 1], program.hi[: n + 1])
    v = np.clip(solution.x[n + 1: 2 * n + 2], 0.0, p.v_m)
    u = np.clip(solution.x[2 * n + 2:], -p.a_m, p.a_m)
    x[0] = problem.initial_state.position
    x[n] = 0.0
    v[n] = p.v_m
    x = np.maximum.accumulate(x)
    trajectory = Trajectory(t0=problem.t0, dt=problem.dt, positions=x, velocities=v, accelerations=u)
    return MotionResult(status=LpStatus.OPTIMAL, trajectory=trajectory,
                        objective=solution.objective_value,
                        slack=safety_slack(problem.front))


def truncation_gap(trajectory: Trajectory, front: Optional[Trajectory], t: float,
                   params: VehicleParams, engine: LpEngine = LpEngine.SIMPLEX) -> float:
    """Re-solve ``trajectory`` from its first grid node at or after ``t``; worst position gap"""
    tail = trajectory.truncated(t)
    problem = MotionProblem(
        initial_state=State(float(tail.positions[0]), float(tail.velocities[0])),
        t0=tail.t0,
        tf=tail.t_end,
        params=params,
        front=front,
        n_steps=tail.n_nodes - 1,
    )
    result = motion_synthesize(problem, engine=engine)
    if not result.feasible:
        return math.inf
    return float(np.abs(result.trajectory.positions - tail.positions).max())


def entry_feasible(front: Optional[Trajectory], t_arrival: float, params: VehicleParams,
                   margin: float = 0.0) -> bool:
    """Whether maximal braking from (-L, v_m) stays behind the front vehicle forever

    Maximal braking minimizes position pointwise, so this decides whether any
    admissible input avoids the vehicle ahead. ``margin`` (m) is extra clearance
    demanded on top of the rear bumper.
    """
    if front is None:
        return True
    stop = t_arrival + params.v_m / params.a_m

    def braking(t):
        s = np.minimum(t - t_arrival, params.v_m / params.a_m)
        return -params.L + params.v_m * s - 0.5 * params.a_m * s * s

    nodes = front.times()
    inner = nodes[(nodes > t_arrival) & (nodes < stop)]
    if front.t_end > t_arrival and front.t_end < stop:
        inner = np.append(inner, front.t_end)
    if t_arrival < front.t0:
        # no plan yet for the front vehicle before its start; judge from its start
        t_arrival_eff = front.t0
        inner = inner[inner > t_arrival_eff]
    else:
        t_arrival_eff = t_arrival
    if t_arrival_eff >= stop:
        breaks = np.array([t_arrival_eff])
    else:
        breaks = np.unique(np.concatenate([[t_arrival_eff], inner, [stop]]))

    def gap(t):
        y, _ = front.sample(t)
        return y - params.l - margin - braking(t)

    # after the stop the gap only grows
    if breaks.size == 1:
        return bool(gap(breaks)[0] >= -EPS_BOUND)
    a, b = breaks[:-1], breaks[1:]
    h = b - a
    g0, g1, g2 = gap(a), gap(0.5 * (a + b)), gap(b)
    worst = min(g0.min(), g2.min())
    curvature = 2.0 * (g2 - 2.0 * g1 + g0) / (h * h)
    slope = (g2 - g0) / h - curvature * h
    with np.errstate(divide="ignore", invalid="ignore"):
        vertex = -slope / (2.0 * curvature)
        inside = (curvature > 0) & (vertex > 0) & (vertex < h)
    if np.any(inside):
        dips = g0[inside] - slope[inside] ** 2 / (4.0 * curvature[inside])
        worst = min(worst, float(dips.min()))
    return bool(worst >= -EPS_BOUND)


class FRegion(str, Enum):
    INTERIOR = "interior"
    BOUNDARY = "boundary"
    OUTSIDE = "outside"


@dataclass(frozen=True)
class FeasibleSetParams:
    nu: int
    params: VehicleParams

    def __post_init__(self):
        if self.nu < 1:
            raise ContractViolation(f"rank behind the pivot vehicle must be >= 1, got {self.nu}")

    @property
    def stop_limit(self) -> float:
        """Furthest stopping point allowed for the nu-th vehicle of a lane"""
        p = self.params
        return -p.v_m ** 2 / (2.0 * p.a_m) - (self.nu - 1) * p.l


def stop_position(state: State, params: VehicleParams) -> float:
    """Where the vehicle stops when braking at a_m from ``state``"""
    return state.position + state.velocity ** 2 / (2.0 * params.a_m)


def in_F(state: State, fp: FeasibleSetParams, tol: float = EPS_F) -> FRegion:
    lhs = stop_position(state, fp.params)
    rhs = fp.stop_limit
    if abs(lhs - rhs) <= tol:
        return FRegion.BOUNDARY
    return FRegion.INTERIOR if lhs < rhs else FRegion.OUTSIDE
