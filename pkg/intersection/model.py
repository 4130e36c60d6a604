"""
Physical model for the intersection simulator
Vehicle parameters, rigid-body geometry, trajectories and their evaluation,
collision checking and delay bookkeeping
"""

import math
from dataclasses import dataclass, field
from enum import IntEnum
from typing import List, Sequence, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, Field

from intersection.errors import ContractViolation, OutOfDomainError

EPS_DYN = 1e-6
EPS_BOUND = 1e-9
# grid-point snapping for float time arithmetic
TIME_EPS = 1e-12


class LaneId(IntEnum):
    ONE = 1
    TWO = 2

    @property
    def other(self) -> "LaneId":
        return LaneId.TWO if self is LaneId.ONE else LaneId.ONE


LANES: Tuple[LaneId, LaneId] = (LaneId.ONE, LaneId.TWO)


class VehicleParams(BaseModel):
    """Geometry and dynamics shared by every vehicle"""

    model_config = ConfigDict(frozen=True, extra="forbid")

    l: float = Field(2.0, gt=0, description="vehicle length (m)")
    w: float = Field(1.0, gt=0, description="vehicle width (m)")
    v_m: float = Field(10.0, gt=0, description="maximum speed (m/s)")
    a_m: float = Field(4.0, gt=0, description="maximum acceleration (m/s^2)")
    L: float = Field(50.0, gt=0, description="control region length (m)")

    @property
    def service_time(self) -> float:
        return self.l / self.v_m

    @property
    def switchover_time(self) -> float:
        return self.w / self.v_m

    @property
    def l_star(self) -> float:
        """Minimum control-region length 2 v_m^2 / a_m"""
        return 2.0 * self.v_m ** 2 / self.a_m

    @property
    def meets_length_assumption(self) -> bool:
        return self.L >= self.l_star - EPS_BOUND

    @property
    def free_flow_time(self) -> float:
        return (self.L + self.l + self.w) / self.v_m


@dataclass(frozen=True)
class State:
    position: float
    velocity: float


@dataclass(frozen=True)
class Rectangle:
    """Open axis-aligned rectangle"""

    x_lo: float
    x_hi: float
    y_lo: float
    y_hi: float

    def __post_init__(self):
        if not (self.x_lo < self.x_hi and self.y_lo < self.y_hi):
            raise ContractViolation(f"degenerate rectangle {self}")

    def intersects(self, other: "Rectangle", tol: float = 0.0) -> bool:
        dx = min(self.x_hi, other.x_hi) - max(self.x_lo, other.x_lo)
        dy = min(self.y_hi, other.y_hi) - max(self.y_lo, other.y_lo)
        return dx > tol and dy > tol


@dataclass(frozen=True, eq=False)
class Trajectory:
    """Time-gridded position/velocity/acceleration history of one vehicle

    Velocity is linear between nodes, so position is quadratic inside a step.
    Past the last node the vehicle keeps its terminal velocity.
    """

    t0: float
    dt: float
    positions: np.ndarray
    velocities: np.ndarray
    accelerations: np.ndarray

    def __post_init__(self):
        n = len(self.positions)
        if n < 2 or len(self.velocities) != n or len(self.accelerations) != n - 1:
            raise ContractViolation(
                f"trajectory arrays have inconsistent lengths "
                f"({n}, {len(self.velocities)}, {len(self.accelerations)})"
            )
        if not self.dt > 0:
            raise ContractViolation(f"trajectory step must be positive, got {self.dt}")

    @property
    def n_nodes(self) -> int:
        return len(self.positions)

    @property
    def t_end(self) -> float:
        return self.t0 + (self.n_nodes - 1) * self.dt

    def times(self) -> np.ndarray:
        return self.t0 + self.dt * np.arange(self.n_nodes)

    def sample(self, times: Sequence[float]) -> Tuple[np.ndarray, np.ndarray]:
        """Vectorized evaluation; returns (positions, velocities)"""
        t = np.atleast_1d(np.asarray(times, dtype=float))
        if t.size and t.min() < self.t0 - TIME_EPS:
            raise OutOfDomainError(f"query t={t.min()} precedes trajectory start {self.t0}")
        tau = np.maximum(t - self.t0, 0.0)
        last = self.n_nodes - 1
        span = last * self.dt

        ratio = tau / self.dt
        nearest = np.rint(ratio)
        on_node = np.abs(ratio - nearest) * self.dt <= TIME_EPS * max(1.0, span)
        j = np.clip(np.floor(ratio).astype(int), 0, last - 1)
        local = tau - j * self.dt
        v0 = self.velocities[j]
        slope = (self.velocities[j + 1] - v0) / self.dt
        pos = self.positions[j] + v0 * local + 0.5 * slope * local ** 2
        vel = v0 + slope * local

        beyond = tau > span
        if np.any(beyond):
            pos[beyond] = self.positions[-1] + self.velocities[-1] * (tau[beyond] - span)
            vel[beyond] = self.velocities[-1]

        snap = on_node & (nearest <= last)
        if np.any(snap):
            k = nearest[snap].astype(int)
            pos[snap] = self.positions[k]
            vel[snap] = self.velocities[k]
        return pos, vel

    def time_at_position(self, target: float) -> float:
        """First time the trajectory reaches ``target`` (extrapolating past the end)"""
        if self.positions[0] >= target:
            return self.t0
        idx = int(np.searchsorted(self.positions, target, side="left"))
        if idx >= self.n_nodes:
            v_end = self.velocities[-1]
            if v_end <= 0:
                return math.inf
            return self.t_end + (target - self.positions[-1]) / v_end
        j = idx - 1
        x0 = self.positions[j]
        v0 = self.velocities[j]
        slope = (self.velocities[j + 1] - v0) / self.dt
        gap = target - x0
        # solve x0 + v0*s + slope*s^2/2 = target on [0, dt]
        if abs(slope) < 1e-12:
            local = gap / v0 if v0 > 0 else self.dt
        else:
            disc = max(v0 * v0 + 2.0 * slope * gap, 0.0)
            local = (-v0 + math.sqrt(disc)) / slope
        return self.t0 + j * self.dt + min(max(local, 0.0), self.dt)

    def truncated(self, t: float) -> "Trajectory":
        """Same trajectory restricted to the grid nodes at or after ``t``"""
        k = int(math.ceil((t - self.t0) / self.dt - 1e-9))
        k = min(max(k, 0), self.n_nodes - 2)
        return Trajectory(
            t0=self.t0 + k * self.dt,
            dt=self.dt,
            positions=self.positions[k:].copy(),
            velocities=self.velocities[k:].copy(),
            accelerations=self.accelerations[k:].copy(),
        )

    def residuals(self) -> Tuple[float, float]:
        """Worst trapezoidal position residual and velocity residual"""
        x, v, u = self.positions, self.velocities, self.accelerations
        pos_res = np.abs(x[1:] - (x[:-1] + 0.5 * (v[:-1] + v[1:]) * self.dt))
        vel_res = np.abs(v[1:] - (v[:-1] + u * self.dt))
        return float(pos_res.max(initial=0.0)), float(vel_res.max(initial=0.0))

    def violations(self, params: VehicleParams, eps_dyn: float = EPS_DYN,
                   eps_bound: float = EPS_BOUND) -> List[str]:
        """Broken invariants, empty when the trajectory is admissible"""
        problems = []
        pos_res, vel_res = self.residuals()
        if pos_res > eps_dyn:
            problems.append(f"position residual {pos_res:.3e}")
        if vel_res > eps_dyn:
            problems.append(f"velocity residual {vel_res:.3e}")
        if self.velocities.min() < -eps_bound or self.velocities.max() > params.v_m + eps_bound:
            problems.append("velocity out of [0, v_m]")
        if np.abs(self.accelerations).max(initial=0.0) > params.a_m + eps_bound:
            problems.append("acceleration exceeds a_m")
        if np.any(np.diff(self.positions) < -eps_dyn):
            problems.append("positions decrease")
        return problems

    @classmethod
    def constant_speed(cls, t0: float, position: float, speed: float, duration: float,
                       n_steps: int = 1) -> "Trajectory":
        dt = duration / n_steps
        times = dt * np.arange(n_steps + 1)
        return cls(
            t0=t0,
            dt=dt,
            positions=position + speed * times,
            velocities=np.full(n_steps + 1, float(speed)),
            accelerations=np.zeros(n_steps),
        )


def rigid_body(y: float, lane: LaneId, params: VehicleParams) -> Rectangle:
    """Footprint of a vehicle whose front bumper is at ``y`` in ``lane``"""
    if LaneId(lane) is LaneId.ONE:
        return Rectangle(y - params.l, y, 0.0, params.w)
    return Rectangle(0.0, params.w, y - params.l, y)


@dataclass
class CollisionReport:
    """Pairs of snapshot indices whose rigid bodies overlap"""

    pairs: List[Tuple[int, int]] = field(default_factory=list)

    @property
    def safe(self) -> bool:
        return not self.pairs


def check_safety(snapshot: Sequence[Tuple[LaneId, float]], params: VehicleParams,
                 tol: float = 0.0) -> CollisionReport:
    """Every pair of overlapping open rectangles in ``snapshot``

    ``tol`` is the overlap depth (m) tolerated before a pair counts.
    """
    n = len(snapshot)
    if n < 2:
        return CollisionReport()
    lanes = np.array([int(lane) for lane, _ in snapshot])
    y = np.array([float(pos) for _, pos in snapshot])
    along_lo, along_hi = y - params.l, y
    x_lo = np.where(lanes == 1, along_lo, 0.0)
    x_hi = np.where(lanes == 1, along_hi, params.w)
    y_lo = np.where(lanes == 1, 0.0, along_lo)
    y_hi = np.where(lanes == 1, params.w, along_hi)

    dx = np.minimum(x_hi[:, None], x_hi[None, :]) - np.maximum(x_lo[:, None], x_lo[None, :])
    dy = np.minimum(y_hi[:, None], y_hi[None, :]) - np.maximum(y_lo[:, None], y_lo[None, :])
    overlap = np.triu((dx > tol) & (dy > tol), k=1)
    rows, cols = np.nonzero(overlap)
    return CollisionReport(pairs=[(int(i), int(j)) for i, j in zip(rows, cols)])


def eval_trajectory(traj: Trajectory, t: float) -> State:
    pos, vel = traj.sample([t])
    return State(position=float(pos[0]), velocity=float(vel[0]))


def compute_delay(t_enter: float, t_exit: float, params: VehicleParams) -> float:
    """Extra transit time over free flow through the control and intersection regions"""
    if t_exit < t_enter:
        raise ContractViolation(f"exit time {t_exit} precedes entry time {t_enter}")
    return (t_exit - t_enter) - params.free_flow_time


def braking_distance(velocity: float, params: VehicleParams) -> float:
    return velocity * velocity / (2.0 * params.a_m)


def overlap_depth(lane_a: LaneId, y_a: np.ndarray, lane_b: LaneId, y_b: np.ndarray,
                  params: VehicleParams) -> np.ndarray:
    """Overlap depth min(dx, dy) of two rigid bodies, vectorized over positions

    Positive where the open rectangles intersect.
    """
    y_a = np.asarray(y_a, dtype=float)
    y_b = np.asarray(y_b, dtype=float)
    if LaneId(lane_a) is LaneId(lane_b):
        along = np.minimum(y_a, y_b) - np.maximum(y_a, y_b) + params.l
        return np.minimum(along, params.w)
    # crossing lanes meet only in the [0, w] x [0, w] square
    reach_a = np.minimum(y_a, params.w) - np.maximum(y_a - params.l, 0.0)
    reach_b = np.minimum(y_b, params.w) - np.maximum(y_b - params.l, 0.0)
    return np.minimum(reach_a, reach_b)
