"""
Traffic-light baseline for the intersection simulator
Staggered green / yellow / red cycle with locally aggressive car following,
run on the same arrival streams as the coordinated system
"""

import logging
import math
from dataclasses import dataclass
from enum import Enum
from typing import Dict, List, Optional, Sequence, Tuple

from intersection.arrivals import sample_arrivals
from intersection.config import LightConfig, ScenarioConfig
from intersection.coordinator import EventLog, VehicleRecord
from intersection.errors import CollisionError, ContractViolation
from intersection.model import LANES, LaneId, VehicleParams, check_safety, compute_delay
from intersection.polling import merge_arrivals

logger = logging.getLogger(__name__)

BISECTION_STEPS = 60
# a car held at the stop line may round onto it
LINE_TOL = 1e-9


class Phase(str, Enum):
    GREEN = "green"
    YELLOW = "yellow"
    RED = "red"


class Directive(str, Enum):
    GO = "go"
    STOP = "stop"


@dataclass(frozen=True)
class FollowerState:
    position: float
    velocity: float


def yellow_duration(params: VehicleParams) -> float:
    """Shortest yellow that lets a committed vehicle clear the intersection"""
    return params.v_m / (2.0 * params.a_m) + (params.l + params.w) / params.v_m


def resolve_yellow(light: LightConfig, params: VehicleParams) -> float:
    minimum = yellow_duration(params)
    if light.yellow_duration is None:
        return minimum
    if light.yellow_duration < minimum - 1e-12:
        raise ContractViolation(f"yellow {light.yellow_duration}s is below the safe minimum {minimum:.4f}s")
    return light.yellow_duration


class LightCycle:
    """Lane 1 runs green, yellow, red, yellow; lane 2 is shifted by half a period"""

    def __init__(self, green_red: float, yellow: float):
        if not green_red > 0 or not yellow > 0:
            raise ContractViolation("green/red and yellow durations must be positive")
        self.green_red = green_red
        self.yellow = yellow

    @property
    def period(self) -> float:
        return 2.0 * (self.green_red + self.yellow)

    def phase(self, lane: LaneId, t: float) -> Phase:
        offset = 0.0 if LaneId(lane) is LaneId.ONE else self.green_red + self.yellow
        u = (t - offset) % self.period
        if u < self.green_red:
            return Phase.GREEN
        if u < self.green_red + self.yellow:
            return Phase.YELLOW
        # red, then the crossing lane's yellow, both mean stop
        return Phase.RED


def step_state(state: FollowerState, a: float, dt: float, v_m: float) -> FollowerState:
    """Exact kinematics over one step with velocity saturated to [0, v_m]"""
    x, v = state.position, state.velocity
    if a > 0:
        limit = (v_m - v) / a
        if limit < dt:
            return FollowerState(x + v * limit + 0.5 * a * limit * limit + v_m * (dt - limit), v_m)
    elif a < 0:
        limit = v / -a
        if limit < dt:
            return FollowerState(x + 0.5 * v * limit, 0.0)
    return FollowerState(x + v * dt + 0.5 * a * dt * dt, min(max(v + a * dt, 0.0), v_m))


def reach_time(state: FollowerState, a: float, target: float, dt: float, v_m: float) -> float:
    """Offset within the step at which the position first reaches ``target``"""
    x, v = state.position, state.velocity
    if x >= target:
        return 0.0
    if a > 0:
        ramp = min((v_m - v) / a, dt)
    elif a < 0:
        ramp = min(v / -a, dt)
    else:
        ramp = dt
    gap = target - x
    if abs(a) > 1e-12:
        disc = v * v + 2.0 * a * gap
        if disc >= 0.0:
            s = (-v + math.sqrt(disc)) / a
            if 0.0 <= s <= ramp:
                return s
    elif v > 0 and gap / v <= dt:
        return gap / v
    x_ramp = x + v * ramp + 0.5 * a * ramp * ramp
    v_ramp = min(max(v + a * ramp, 0.0), v_m)
    if v_ramp <= 0:
        return math.inf
    return ramp + (target - x_ramp) / v_ramp


def _follow_gap(state: FollowerState, front: FollowerState, a: float, dt: float,
                params: VehicleParams) -> float:
    """Positive when the next-step stopping-distance inequality is violated"""
    nxt = step_state(state, a, dt, params.v_m)
    d = front.position - nxt.position
    return nxt.velocity ** 2 / (2.0 * params.a_m) - (d - params.l + front.velocity ** 2 / (2.0 * params.a_m))


def _largest_safe(state: FollowerState, front: FollowerState, a_hi: float, dt: float,
                  params: VehicleParams) -> float:
    """Largest a in [-a_m, a_hi] keeping the inequality; the gap is monotone in a"""
    a_lo = -params.a_m
    if _follow_gap(state, front, a_hi, dt, params) <= 0.0:
        return a_hi
    if _follow_gap(state, front, a_lo, dt, params) > 0.0:
        return a_lo

    # closed form while the velocity stays inside [0, v_m]
    x, v = state.position, state.velocity
    qa = dt * dt / (2.0 * params.a_m)
    qb = v * dt / params.a_m + 0.5 * dt * dt
    qc = (v * v / (2.0 * params.a_m) + x + v * dt + params.l
          - front.position - front.velocity ** 2 / (2.0 * params.a_m))
    disc = qb * qb - 4.0 * qa * qc
    if disc >= 0.0:
        root = (-qb + math.sqrt(disc)) / (2.0 * qa)
        if a_lo <= root <= a_hi and 0.0 <= v + root * dt <= params.v_m \
                and _follow_gap(state, front, root, dt, params) <= 1e-12:
            return root

    lo, hi = a_lo, a_hi
    for _ in range(BISECTION_STEPS):
        mid = 0.5 * (lo + hi)
        if _follow_gap(state, front, mid, dt, params) <= 0.0:
            lo = mid
        else:
            hi = mid
    return lo


def _stop_line(params: VehicleParams) -> FollowerState:
    """Virtual stopped vehicle whose rear bumper sits on the stop line"""
    return FollowerState(position=params.l, velocity=0.0)


def stop_line_reachable(state: FollowerState, dt: float, params: VehicleParams) -> bool:
    """Whether full braking still halts at the stop line, up to one step of rounding"""
    if state.position > LINE_TOL:
        return False
    return _follow_gap(state, _stop_line(params), -params.a_m, dt, params) <= params.a_m * dt * dt


def safe_follow_accel(state: FollowerState, front: Optional[FollowerState], dt: float,
                      params: VehicleParams, directive: Directive = Directive.GO) -> float:
    """Most aggressive acceleration that keeps the follower able to stop behind ``front``

    ``front`` is the vehicle ahead after its own step has been committed.
    A stop directive adds a virtual stopped vehicle on the stop line, honoured
    while stopping there is still possible; once it is honoured the braking
    envelope never leaves the line.
    """
    a = params.a_m
    if front is not None:
        a = _largest_safe(state, front, a, dt, params)
    if Directive(directive) is Directive.STOP and stop_line_reachable(state, dt, params):
        a = min(a, _largest_safe(state, _stop_line(params), params.a_m, dt, params))
    return a


@dataclass
class _Car:
    id: int
    lane: LaneId
    t_arrival: float
    state: FollowerState
    latch: Optional[Directive] = None
    crossing_time: float = math.nan


class TrafficLightSimulator:
    """Fixed-step traffic-light run over the coordinated system's arrival streams"""

    def __init__(self, config: ScenarioConfig, light: LightConfig):
        self.config = config
        self.params = config.params
        self.cycle = LightCycle(light.green_red_duration, resolve_yellow(light, self.params))
        self.lanes: Dict[LaneId, List[_Car]] = {lane: [] for lane in LANES}
        self.records: Dict[int, VehicleRecord] = {}
        self.log = EventLog(params=self.params, horizon=config.run.horizon, seed=config.run.seed)

    def _spawn(self, lane: LaneId, t_arrival: float, t: float, vehicle_id: int):
        p = self.params
        state = FollowerState(-p.L + p.v_m * (t - t_arrival), p.v_m)
        queue = self.lanes[lane]
        if queue:
            front = queue[-1].state
            slack = (front.position - state.position - p.l
                     + front.velocity ** 2 / (2.0 * p.a_m) - p.v_m ** 2 / (2.0 * p.a_m))
            if slack < -1e-9:
                self.records[vehicle_id] = VehicleRecord(id=vehicle_id, lane=lane, t_arrival=t_arrival,
                                                         diverted=True)
                return
        queue.append(_Car(id=vehicle_id, lane=lane, t_arrival=t_arrival, state=state))

    def _directive(self, car: _Car, phase: Phase) -> Directive:
        p = self.params
        if car.state.position > LINE_TOL or phase is Phase.GREEN:
            car.latch = None
            return Directive.GO
        if phase is Phase.YELLOW and car.latch is None:
            can_stop = car.state.position + car.state.velocity ** 2 / (2.0 * p.a_m) <= 0.0
            car.latch = Directive.STOP if can_stop else Directive.GO
        return car.latch or Directive.STOP

    def _step(self, t: float, dt: float):
        p = self.params
        exit_line = p.l + p.w
        for lane in LANES:
            phase = self.cycle.phase(lane, t)
            front: Optional[FollowerState] = None
            survivors = []
            for car in self.lanes[lane]:
                directive = self._directive(car, phase)
                a = safe_follow_accel(car.state, front, dt, p, directive)
                nxt = step_state(car.state, a, dt, p.v_m)
                if directive is Directive.STOP and nxt.position > 0.0 \
                        and stop_line_reachable(car.state, dt, p):
                    # rounding past the stopping point; hold the car on the line
                    nxt = FollowerState(0.0, 0.0)
                if math.isnan(car.crossing_time) and nxt.position > LINE_TOL:
                    car.crossing_time = t + reach_time(car.state, a, 0.0, dt, p.v_m)
                    if self.cycle.phase(lane, car.crossing_time) is Phase.RED:
                        self.log.red_entries += 1
                        logger.warning(f"⚠️ Vehicle {car.id} entered lane {int(lane)} on red "
                                       f"at t={car.crossing_time:.3f}")
                if nxt.position >= exit_line:
                    exit_time = t + reach_time(car.state, a, exit_line, dt, p.v_m)
                    self._finalize(car, exit_time)
                else:
                    survivors.append(car)
                car.state = nxt
                front = nxt
            self.lanes[lane] = survivors

    def _finalize(self, car: _Car, exit_time: float):
        delay = compute_delay(car.t_arrival, exit_time, self.params)
        if -1e-9 < delay < 0.0:
            delay = 0.0
        self.records[car.id] = VehicleRecord(
            id=car.id, lane=car.lane, t_arrival=car.t_arrival, diverted=False,
            crossing_time=car.crossing_time, exit_time=exit_time, delay=delay,
        )

    def _check(self, t: float):
        cars = [car for lane in LANES for car in self.lanes[lane]]
        self.log.collision_checks += 1
        # phase changes are seen one step late at most
        tol = self.config.checks.collision_tol + self.params.a_m * self.config.run.dt_sim ** 2
        report = check_safety([(car.lane, car.state.position) for car in cars], self.params, tol=tol)
        if report.safe:
            return
        pairs = [(cars[i].id, cars[j].id) for i, j in report.pairs]
        self.log.collision_failures += 1
        self.log.collisions.append((t, pairs))
        logger.error(f"❌ Traffic-light collision at t={t:.4f}s between {pairs}")
        if self.config.checks.fail_fast:
            raise CollisionError(t, pairs)

    def run(self, arrivals: Optional[Dict[LaneId, Sequence[float]]] = None) -> EventLog:
        config = self.config
        if arrivals is None:
            arrivals = sample_arrivals(config.lane_specs(), config.run.horizon, config.run.seed,
                                       self.params.service_time)
        events: List[Tuple[float, LaneId]] = merge_arrivals(arrivals)
        dt = config.run.dt_sim
        logger.info(f"🚥 Starting traffic-light run: {len(events)} arrivals, green/red "
                    f"{self.cycle.green_red}s, yellow {self.cycle.yellow:.3f}s")

        index = 0
        k = 0
        while index < len(events) or any(self.lanes[lane] for lane in LANES):
            t = k * dt
            while index < len(events) and events[index][0] <= t + 1e-12:
                t_arrival, lane = events[index]
                self._spawn(lane, t_arrival, t, index)
                index += 1
            self._step(t, dt)
            if config.checks.collision_check:
                self._check(t + dt)
            k += 1

        self.log.records = [self.records[vid] for vid in sorted(self.records)]
        logger.info(f"✅ Traffic-light run complete: mean delay {self.log.mean_delay:.3f}s over "
                    f"{len(self.log.accepted())} vehicles")
        return self.log


def run_traffic_light(config: ScenarioConfig, light: LightConfig,
                      arrivals: Optional[Dict[LaneId, Sequence[float]]] = None) -> EventLog:
    return TrafficLightSimulator(config, light).run(arrivals)
