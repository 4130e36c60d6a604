"""
Coordinator for the signalless intersection
Event-triggered scheduling: every arrival is either diverted or queued in the
polling system, after which the affected vehicles are re-planned front to back
"""

import logging
import math
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from intersection.arrivals import lane_generators, sample_arrivals, sample_poisson
from intersection.config import ScenarioConfig
from intersection.errors import (
    AssumptionError,
    CollisionError,
    ContractViolation,
    InfeasibleMotionError,
    NegativeDelayError,
)
from intersection.model import (
    LANES,
    TIME_EPS,
    LaneId,
    State,
    Trajectory,
    VehicleParams,
    compute_delay,
    eval_trajectory,
    overlap_depth,
)
from intersection.motion import (
    FeasibleSetParams,
    FRegion,
    MotionProblem,
    entry_feasible,
    in_F,
    motion_synthesize,
    truncation_gap,
)
from intersection.polling import PollingPolicy, PollingSystem, Schedule, merge_arrivals, run_polling

logger = logging.getLogger(__name__)

NEGATIVE_DELAY_TOL = 1e-6
DELAY_BOUND_TOL = 1e-6
SCHEDULE_TOL = 1e-9


@dataclass(frozen=True)
class VehicleRecord:
    id: int
    lane: LaneId
    t_arrival: float
    diverted: bool
    schedule_time: float = math.nan
    crossing_time: float = math.nan
    exit_time: float = math.nan
    delay: float = math.nan
    wait: float = math.nan
    segments: Tuple[Trajectory, ...] = field(default=(), repr=False, compare=False)

    def realized(self, times: Sequence[float]) -> Tuple[np.ndarray, np.ndarray]:
        """Position and velocity along the path actually driven"""
        if not self.segments:
            raise ContractViolation(f"vehicle {self.id} has no recorded trajectory")
        t = np.asarray(times, dtype=float)
        starts = np.array([segment.t0 for segment in self.segments])
        which = np.clip(np.searchsorted(starts, t, side="right") - 1, 0, len(self.segments) - 1)
        positions = np.empty_like(t)
        velocities = np.empty_like(t)
        for index in np.unique(which):
            mask = which == index
            positions[mask], velocities[mask] = self.segments[index].sample(t[mask])
        return positions, velocities


@dataclass
class LiveVehicle:
    id: int
    lane: LaneId
    t_arrival: float
    schedule_time: float
    trajectory: Optional[Trajectory] = None
    segments: List[Trajectory] = field(default_factory=list)
    slack: float = 0.0

    def crossing_time(self) -> float:
        return self.trajectory.time_at_position(0.0)

    def exit_time(self, params: VehicleParams) -> float:
        return self.crossing_time() + (params.l + params.w) / params.v_m


@dataclass
class ArrivalOutcome:
    vehicle_id: int
    accepted: bool
    schedule_time: float = math.nan
    replanned: List[int] = field(default_factory=list)


@dataclass
class EventLog:
    """Per-vehicle outcomes of a run plus its runtime-check counters"""

    params: VehicleParams
    horizon: float
    seed: int
    records: List[VehicleRecord] = field(default_factory=list)
    collision_checks: int = 0
    collision_failures: int = 0
    collisions: List[Tuple[float, List[Tuple[int, int]]]] = field(default_factory=list)
    truncation_checks: int = 0
    truncation_violations: int = 0
    membership_checks: int = 0
    membership_violations: int = 0
    regularity_violations: int = 0
    delay_bound_violations: int = 0
    red_entries: int = 0
    replans: int = 0
    max_grid_step: float = 0.0

    def lane_records(self, lane: Optional[LaneId] = None) -> List[VehicleRecord]:
        return [r for r in self.records if lane is None or r.lane == lane]

    def accepted(self, lane: Optional[LaneId] = None) -> List[VehicleRecord]:
        return [r for r in self.lane_records(lane) if not r.diverted]

    def diverted(self, lane: Optional[LaneId] = None) -> List[VehicleRecord]:
        return [r for r in self.lane_records(lane) if r.diverted]

    def delays(self, lane: Optional[LaneId] = None) -> np.ndarray:
        return np.array([r.delay for r in self.accepted(lane)], dtype=float)

    def waits(self, lane: Optional[LaneId] = None) -> np.ndarray:
        return np.array([r.wait for r in self.accepted(lane)], dtype=float)

    @property
    def mean_delay(self) -> float:
        delays = self.delays()
        return float(delays.mean()) if delays.size else 0.0


@dataclass
class ThinningStats:
    arrivals: Dict[LaneId, float]
    served: Dict[LaneId, float]
    theta: Dict[LaneId, float]

    @property
    def total_theta(self) -> float:
        return sum(self.theta.values())

    @property
    def total_served(self) -> float:
        return sum(self.served.values())

    @property
    def total_arrivals(self) -> float:
        return sum(self.arrivals.values())

    @property
    def theta_fraction(self) -> float:
        return self.total_theta / self.total_arrivals if self.total_arrivals else 0.0


def thinning_stats(log: EventLog, horizon: Optional[float] = None) -> ThinningStats:
    """Diverted, served and arriving vehicles per second, per lane"""
    horizon = log.horizon if horizon is None else horizon
    if not horizon > 0:
        raise ContractViolation(f"horizon must be positive, got {horizon}")
    arrivals, served, theta = {}, {}, {}
    for lane in LANES:
        arrivals[lane] = len(log.lane_records(lane)) / horizon
        served[lane] = len(log.accepted(lane)) / horizon
        theta[lane] = len(log.diverted(lane)) / horizon
    return ThinningStats(arrivals=arrivals, served=served, theta=theta)


class Coordinator:
    """Control-region state: live vehicles per lane and the embedded polling system"""

    def __init__(self, config: ScenarioConfig):
        self.config = config
        self.params = config.params
        p = self.params
        if not p.meets_length_assumption:
            if not config.run.assumption_override:
                raise AssumptionError(
                    f"control region L={p.L} m is shorter than L*={p.l_star} m; "
                    f"set run.assumption_override to run anyway"
                )
            logger.warning(f"⚠️ Running with L={p.L} m below L*={p.l_star} m, safety is not guaranteed")

        self.polling = PollingSystem(p.service_time, p.switchover_time, config.policy,
                                     initial_queue=config.run.initial_queue, keep_history=False)
        self.lanes: Dict[LaneId, List[LiveVehicle]] = {lane: [] for lane in LANES}
        self.vehicles: Dict[int, LiveVehicle] = {}
        self.records: Dict[int, VehicleRecord] = {}
        self.clock = 0.0
        self.log = EventLog(params=p, horizon=config.run.horizon, seed=config.run.seed)
        self._next_id = 0
        self._last_k = -1
        self._last_order: List[int] = []

    # time and safety

    def advance_to(self, t: float):
        """Run collision checks over (clock, t] and retire vehicles that left"""
        if t < self.clock - TIME_EPS:
            raise ContractViolation(f"cannot move coordinator clock from {self.clock} back to {t}")
        self._check_window(t)
        self.clock = max(self.clock, t)
        self._retire(self.clock)

    def _check_times(self, t: float) -> np.ndarray:
        dt = self.config.run.dt_sim
        k_hi = int(math.floor(t / dt + 1e-9))
        grid = np.arange(self._last_k + 1, k_hi + 1) * dt
        self._last_k = max(self._last_k, k_hi)
        if abs(t - k_hi * dt) > 1e-9 and t > self.clock:
            grid = np.append(grid, t)
        return grid

    def _check_window(self, t: float):
        times = self._check_times(t)
        if not self.config.checks.collision_check or times.size == 0:
            return
        self.log.collision_checks += int(times.size)
        live = [v for v in self.vehicles.values() if v.trajectory is not None]
        if len(live) < 2:
            return

        p = self.params
        step = max(v.trajectory.dt for v in live)
        tol = self.config.checks.collision_tol + p.a_m * step * step / 4.0 + max(v.slack for v in live)
        positions = [v.trajectory.sample(times)[0] for v in live]
        present = [y < p.l + p.w for y in positions]

        hits: Dict[int, List[Tuple[int, int]]] = {}
        for i in range(len(live)):
            for j in range(i + 1, len(live)):
                depth = overlap_depth(live[i].lane, positions[i], live[j].lane, positions[j], p)
                bad = np.flatnonzero((depth > tol) & present[i] & present[j])
                for index in bad:
                    hits.setdefault(int(index), []).append((live[i].id, live[j].id))
        if not hits:
            return

        for index in sorted(hits):
            self.log.collision_failures += 1
            self.log.collisions.append((float(times[index]), hits[index]))
        first = min(hits)
        logger.error(f"❌ Collision at t={times[first]:.4f}s between {hits[first]}")
        if self.config.checks.fail_fast:
            raise CollisionError(float(times[first]), hits[first])

    def _retire(self, t: float):
        p = self.params
        for lane in LANES:
            queue = self.lanes[lane]
            while queue and queue[0].trajectory is not None and queue[0].exit_time(p) <= t + TIME_EPS:
                self._finalize(queue.pop(0))

    def _finalize(self, vehicle: LiveVehicle):
        p = self.params
        crossing = vehicle.crossing_time()
        exit_time = crossing + (p.l + p.w) / p.v_m
        delay = compute_delay(vehicle.t_arrival, exit_time, p)
        wait = vehicle.schedule_time - vehicle.t_arrival
        if delay < -NEGATIVE_DELAY_TOL:
            raise NegativeDelayError(vehicle.id, delay)
        if delay > wait + DELAY_BOUND_TOL:
            self.log.delay_bound_violations += 1
            logger.warning(f"⚠️ Vehicle {vehicle.id} delay {delay:.6f}s exceeds its wait {wait:.6f}s")
        self.records[vehicle.id] = VehicleRecord(
            id=vehicle.id,
            lane=vehicle.lane,
            t_arrival=vehicle.t_arrival,
            diverted=False,
            schedule_time=vehicle.schedule_time,
            crossing_time=crossing,
            exit_time=exit_time,
            delay=delay,
            wait=wait,
            segments=tuple(vehicle.segments),
        )
        del self.vehicles[vehicle.id]

    # arrivals

    def on_arrival(self, lane: LaneId, t: float) -> ArrivalOutcome:
        """Divert or admit a vehicle entering at (-L, v_m) and re-plan whoever is affected"""
        lane = LaneId(lane)
        if t < self.clock - TIME_EPS:
            raise ContractViolation(f"arrival at {t} precedes coordinator clock {self.clock}")
        self.advance_to(t)
        vehicle_id = self._next_id
        self._next_id += 1

        queue = self.lanes[lane]
        front = queue[-1].trajectory if queue else None
        # grid braking can overshoot the exact stop point by up to a_m h^2 / 8
        margin = self.params.a_m * self.log.max_grid_step ** 2 / 8.0
        if not entry_feasible(front, t, self.params, margin=margin):
            self.records[vehicle_id] = VehicleRecord(id=vehicle_id, lane=lane, t_arrival=t, diverted=True)
            logger.debug(f"vehicle {vehicle_id} diverted from lane {int(lane)} at t={t:.4f}")
            return ArrivalOutcome(vehicle_id=vehicle_id, accepted=False)

        self.polling.add_to_queue(lane, t, customer_id=vehicle_id)
        schedule = self.polling.simulate()
        self._audit_regularity(schedule, vehicle_id)

        vehicle = LiveVehicle(id=vehicle_id, lane=lane, t_arrival=t,
                              schedule_time=schedule.times[vehicle_id])
        queue.append(vehicle)
        self.vehicles[vehicle_id] = vehicle

        self._audit_membership(schedule, vehicle_id, t)
        if self.config.checks.check_truncation:
            self._audit_truncation(schedule, vehicle_id, t)
        replanned = self._replan(schedule, t)
        return ArrivalOutcome(vehicle_id=vehicle_id, accepted=True,
                              schedule_time=vehicle.schedule_time, replanned=replanned)

    def _audit_regularity(self, schedule: Schedule, vehicle_id: int):
        order = schedule.order_ids()
        present = set(order)
        expected = [cid for cid in self._last_order if cid in present]
        if [cid for cid in order if cid != vehicle_id] != expected:
            self.log.regularity_violations += 1
            logger.warning(f"⚠️ Service order changed beyond inserting vehicle {vehicle_id}")
        self._last_order = order

    def _audit_membership(self, schedule: Schedule, vehicle_id: int, t: float):
        order = schedule.order_ids()
        later = order[order.index(vehicle_id) + 1:]
        rank = {lane: 0 for lane in LANES}
        tol = self.config.checks.membership_tol
        for cid in later:
            vehicle = self.vehicles[cid]
            rank[vehicle.lane] += 1
            state = eval_trajectory(vehicle.trajectory, t)
            region = in_F(state, FeasibleSetParams(nu=rank[vehicle.lane], params=self.params), tol=tol)
            self.log.membership_checks += 1
            if region is FRegion.OUTSIDE:
                self.log.membership_violations += 1
                logger.warning(f"⚠️ Vehicle {cid} at {state} is outside its stop-then-go set "
                               f"(nu={rank[vehicle.lane]}) at t={t:.4f}")

    def _audit_truncation(self, schedule: Schedule, vehicle_id: int, t: float):
        order = schedule.order_ids()
        earlier = set(order[:order.index(vehicle_id)])
        engine = self.config.motion.engine
        for lane in LANES:
            front = None
            for vehicle in self.lanes[lane]:
                traj = vehicle.trajectory
                if vehicle.id in earlier and traj is not None and traj.t_end - t > traj.dt:
                    self.log.truncation_checks += 1
                    gap = truncation_gap(traj, front, t, self.params, engine=engine)
                    if gap > self.config.checks.truncation_tol:
                        self.log.truncation_violations += 1
                        logger.warning(f"⚠️ Vehicle {vehicle.id} re-solve drifts {gap:.3e} m at t={t:.4f}")
                front = traj

    def _replan(self, schedule: Schedule, t: float) -> List[int]:
        replanned = []
        for lane in LANES:
            front: Optional[Trajectory] = None
            front_changed = False
            for vehicle in self.lanes[lane]:
                tau = schedule.times.get(vehicle.id, vehicle.schedule_time)
                changed = (vehicle.trajectory is None or front_changed
                           or abs(tau - vehicle.schedule_time) > SCHEDULE_TOL)
                if changed:
                    self._plan(vehicle, tau, front, t)
                    replanned.append(vehicle.id)
                front_changed = changed
                front = vehicle.trajectory
        return replanned

    def _plan(self, vehicle: LiveVehicle, tau: float, front: Optional[Trajectory], t: float):
        p = self.params
        if vehicle.trajectory is None:
            state = State(position=-p.L, velocity=p.v_m)
        else:
            state = eval_trajectory(vehicle.trajectory, t)
        problem = MotionProblem(initial_state=state, t0=t, tf=tau + p.L / p.v_m, params=p,
                                front=front, n_steps=self.config.motion.n_steps)
        result = motion_synthesize(problem, engine=self.config.motion.engine,
                                   pricing=self.config.motion.pricing)
        if not result.feasible:
            dump = self.dump()
            dump.update({"vehicle": vehicle.id, "lane": int(vehicle.lane), "state": (state.position, state.velocity),
                         "t0": t, "tf": problem.tf, "has_front": front is not None,
                         "lp_status": result.status.value})
            logger.error(f"❌ Motion synthesis {result.status.value} for vehicle {vehicle.id} at t={t:.4f}")
            raise InfeasibleMotionError(
                f"motion synthesis {result.status.value} for vehicle {vehicle.id} at t={t:.6f}", dump=dump
            )
        vehicle.trajectory = result.trajectory
        vehicle.slack = result.slack
        vehicle.schedule_time = tau
        if self.config.checks.record_trajectories:
            vehicle.segments.append(result.trajectory)
        self.log.replans += 1
        self.log.max_grid_step = max(self.log.max_grid_step, result.trajectory.dt)

    def dump(self) -> Dict[str, object]:
        return {
            "clock": self.clock,
            "polling": self.polling.describe(),
            "live": {
                int(lane): [(v.id, v.t_arrival, v.schedule_time) for v in queue]
                for lane, queue in self.lanes.items()
            },
        }

    # whole runs

    def finish(self) -> EventLog:
        """Let every live vehicle leave, then assemble the log"""
        p = self.params
        pending = [v.exit_time(p) for v in self.vehicles.values() if v.trajectory is not None]
        if pending:
            self.advance_to(max(max(pending), self.clock))
        self.log.records = [self.records[vid] for vid in sorted(self.records)]
        return self.log

    def run(self, arrivals: Optional[Dict[LaneId, Sequence[float]]] = None) -> EventLog:
        config = self.config
        if arrivals is None:
            arrivals = sample_arrivals(config.lane_specs(), config.run.horizon, config.run.seed,
                                       self.params.service_time)
        events = merge_arrivals(arrivals)
        logger.info(f"🚦 Starting coordinated run: {len(events)} arrivals over {config.run.horizon}s "
                    f"(seed {config.run.seed}, policy {config.policy.label})")
        for t, lane in events:
            self.on_arrival(lane, t)
        log = self.finish()
        logger.info(f"✅ Run complete: {len(log.accepted())} served, {len(log.diverted())} diverted, "
                    f"{log.collision_failures} collision instants in {log.collision_checks} checks")
        return log


def run(config: ScenarioConfig, arrivals: Optional[Dict[LaneId, Sequence[float]]] = None) -> EventLog:
    return Coordinator(config).run(arrivals)


def polling_reference_wait(config: ScenarioConfig) -> float:
    """Mean wait of exhaustive polling fed Poisson arrivals at each lane's Matérn parameter rate"""
    streams = lane_generators(config.seed)
    arrivals = {}
    for lane in LANES:
        spec = config.lane_specs().get(lane)
        rate = 0.0 if spec is None else spec.underlying_rate(config.params.service_time)
        if rate <= 0:
            arrivals[lane] = []
            continue
        arrivals[lane] = sample_poisson(rate, config.run.horizon, streams[lane])
    p = config.params
    result = run_polling(arrivals, PollingPolicy(), p.service_time, p.switchover_time,
                         initial_queue=config.run.initial_queue)
    return result.mean_wait
