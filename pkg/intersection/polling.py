"""
Polling system for the intersection simulator
Two queues, one server, deterministic service time s and switchover time r,
wait-and-see idling and pluggable regular policies
"""

import copy
import logging
import math
from abc import ABC, abstractmethod
from collections import deque
from dataclasses import dataclass, field
from enum import Enum
from typing import Deque, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, model_validator

from intersection.errors import ContractViolation
from intersection.model import LANES, LaneId

logger = logging.getLogger(__name__)

CLOCK_EPS = 1e-12


class PolicyKind(str, Enum):
    EXHAUSTIVE = "exhaustive"
    GATED = "gated"
    K_LIMITED = "k_limited"


class Action(Enum):
    SERVE = "serve"        # next customer of the current visit
    REVISIT = "revisit"    # new visit at the same queue, no switchover
    SWITCH = "switch"
    IDLE = "idle"


@dataclass(frozen=True)
class Customer:
    id: int
    queue: LaneId
    arrival: float


class PolicyRule(ABC):
    """Decides what the server does after a service completes

    Rules are stateless; the per-visit gate and counter live on the system.
    """

    name = "rule"

    @abstractmethod
    def decide(self, system: "PollingSystem") -> Action:
        ...

    def __repr__(self):
        return f"{type(self).__name__}()"


class ExhaustiveRule(PolicyRule):
    name = "exhaustive"

    def decide(self, system: "PollingSystem") -> Action:
        if system.queue_length(system.queue):
            return Action.SERVE
        if system.queue_length(system.queue.other):
            return Action.SWITCH
        return Action.IDLE


class GatedRule(PolicyRule):
    name = "gated"

    def decide(self, system: "PollingSystem") -> Action:
        own = system.queue_length(system.queue)
        if system.gate_remaining > 0 and own:
            return Action.SERVE
        if system.queue_length(system.queue.other):
            return Action.SWITCH
        if own:
            return Action.REVISIT
        return Action.IDLE


class KLimitedRule(PolicyRule):
    name = "k_limited"

    def __init__(self, k: int):
        if k < 1:
            raise ContractViolation(f"k-limited policy needs k >= 1, got {k}")
        self.k = k

    def decide(self, system: "PollingSystem") -> Action:
        own = system.queue_length(system.queue)
        if system.visit_count < self.k and own:
            return Action.SERVE
        if system.queue_length(system.queue.other):
            return Action.SWITCH
        if own:
            return Action.REVISIT
        return Action.IDLE

    def __repr__(self):
        return f"KLimitedRule(k={self.k})"


class PollingPolicy(BaseModel):
    """Configured polling policy"""

    model_config = ConfigDict(frozen=True, extra="forbid")

    kind: PolicyKind = PolicyKind.EXHAUSTIVE
    k: Optional[int] = Field(None, ge=1)

    @model_validator(mode="after")
    def _check_k(self):
        if self.kind is PolicyKind.K_LIMITED and self.k is None:
            raise ValueError("k_limited policy requires k")
        return self

    def build(self) -> PolicyRule:
        if self.kind is PolicyKind.EXHAUSTIVE:
            return ExhaustiveRule()
        if self.kind is PolicyKind.GATED:
            return GatedRule()
        return KLimitedRule(self.k)

    @property
    def label(self) -> str:
        return f"k_limited({self.k})" if self.kind is PolicyKind.K_LIMITED else self.kind.value


PolicyLike = Union[PollingPolicy, PolicyRule]


def as_rule(policy: PolicyLike) -> PolicyRule:
    return policy.build() if isinstance(policy, PollingPolicy) else policy


class ServerMode(Enum):
    IDLE = "idle"
    SERVING = "serving"
    SWITCHING = "switching"


@dataclass
class Schedule:
    """Projected schedule times per queue and the induced service order"""

    times: Dict[int, float] = field(default_factory=dict)
    queues: Dict[int, LaneId] = field(default_factory=dict)
    service_order: List[Tuple[int, LaneId]] = field(default_factory=list)

    def lane_times(self, lane: LaneId) -> List[float]:
        return [self.times[cid] for cid, q in self.service_order if q == lane]

    @property
    def T1(self) -> List[float]:
        return self.lane_times(LaneId.ONE)

    @property
    def T2(self) -> List[float]:
        return self.lane_times(LaneId.TWO)

    def order_ids(self) -> List[int]:
        return [cid for cid, _ in self.service_order]

    def __len__(self):
        return len(self.service_order)


class PollingSystem:
    """Two-queue polling server with deterministic service and switchover times"""

    def __init__(self, service_time: float, switchover_time: float, policy: PolicyLike,
                 initial_queue: Optional[LaneId] = None, clock: float = 0.0,
                 keep_history: bool = True):
        if not service_time > 0:
            raise ContractViolation(f"service time must be positive, got {service_time}")
        if switchover_time < 0:
            raise ContractViolation(f"switchover time must be non-negative, got {switchover_time}")
        self.s = float(service_time)
        self.r = float(switchover_time)
        self.rule = as_rule(policy)
        self.clock = float(clock)
        self.queues: Dict[LaneId, Deque[Customer]] = {lane: deque() for lane in LANES}
        self.mode = ServerMode.IDLE
        # current queue, switch target, or last-served queue; None before any service
        self.queue: Optional[LaneId] = LaneId(initial_queue) if initial_queue is not None else None
        self.customer: Optional[Customer] = None
        self.started = self.clock
        self.gate_remaining = 0
        self.visit_count = 0
        self.keep_history = keep_history
        self.history: List[Tuple[Customer, float]] = []
        self._next_id = 0
        self._recorder: Optional[List[Tuple[Customer, float]]] = None

    def queue_length(self, lane: Optional[LaneId]) -> int:
        return len(self.queues[lane]) if lane is not None else 0

    @property
    def waiting(self) -> int:
        return sum(len(q) for q in self.queues.values())

    @property
    def is_empty(self) -> bool:
        return self.mode is ServerMode.IDLE and self.waiting == 0

    def describe(self) -> Dict[str, object]:
        return {
            "clock": self.clock,
            "mode": self.mode.value,
            "queue": int(self.queue) if self.queue is not None else None,
            "customer": self.customer.id if self.customer else None,
            "started": self.started,
            "waiting": {int(lane): [c.id for c in q] for lane, q in self.queues.items()},
        }

    # event engine

    def _next_event_time(self) -> float:
        if self.mode is ServerMode.SERVING:
            return self.started + self.s
        if self.mode is ServerMode.SWITCHING:
            return self.started + self.r
        return math.inf

    def _begin_visit(self):
        self.gate_remaining = len(self.queues[self.queue])
        self.visit_count = 0

    def _start_service(self, t: float):
        customer = self.queues[self.queue].popleft()
        self.mode = ServerMode.SERVING
        self.customer = customer
        self.started = t
        self.gate_remaining = max(self.gate_remaining - 1, 0)
        self.visit_count += 1
        if self._recorder is not None:
            self._recorder.append((customer, t))
        elif self.keep_history:
            self.history.append((customer, t))

    def _dispatch(self, t: float):
        action = self.rule.decide(self)
        if action is Action.SERVE:
            self._start_service(t)
        elif action is Action.REVISIT:
            self._begin_visit()
            self._start_service(t)
        elif action is Action.SWITCH:
            self.mode = ServerMode.SWITCHING
            self.queue = self.queue.other
            self.customer = None
            self.started = t
        else:
            self.mode = ServerMode.IDLE
            self.customer = None
            self.started = t

    def _fire(self):
        t = self._next_event_time()
        if self.mode is ServerMode.SERVING:
            self.customer = None
            self._dispatch(t)
        elif self.mode is ServerMode.SWITCHING:
            self._begin_visit()
            self._start_service(t)

    # operations

    def advance(self, t: float) -> "PollingSystem":
        """Commit every service completion and switchover up to ``t``"""
        if t < self.clock - CLOCK_EPS:
            raise ContractViolation(f"cannot advance from {self.clock} back to {t}")
        while self._next_event_time() <= t:
            self._fire()
        self.clock = max(self.clock, t)
        return self

    def add_to_queue(self, queue: LaneId, arrival: float,
                     customer_id: Optional[int] = None) -> Customer:
        """Append a customer; an idle server reacts per wait-and-see"""
        if arrival < self.clock - CLOCK_EPS:
            raise ContractViolation(f"arrival {arrival} precedes system clock {self.clock}")
        queue = LaneId(queue)
        self.advance(arrival)
        if customer_id is None:
            customer_id = self._next_id
        self._next_id = max(self._next_id, customer_id + 1)
        customer = Customer(id=customer_id, queue=queue, arrival=arrival)
        self.queues[queue].append(customer)

        if self.mode is ServerMode.IDLE:
            if self.queue is None or self.queue == queue:
                self.queue = queue
                self._begin_visit()
                self._start_service(arrival)
            else:
                self.mode = ServerMode.SWITCHING
                self.queue = queue
                self.started = arrival
        return customer

    def simulate(self, include_history: bool = False) -> Schedule:
        """Project the schedule assuming no further arrivals; leaves ``self`` untouched"""
        shadow = copy.copy(self)
        shadow.queues = {lane: deque(q) for lane, q in self.queues.items()}
        shadow.history = []
        shadow._recorder = []

        schedule = Schedule()
        started: List[Tuple[Customer, float]] = []
        if include_history:
            started.extend(self.history)
        in_history = include_history and self.keep_history
        if self.mode is ServerMode.SERVING and not in_history:
            started.append((self.customer, self.started))
        while shadow.mode is not ServerMode.IDLE:
            shadow._fire()
        started.extend(shadow._recorder)

        for customer, tau in started:
            schedule.times[customer.id] = tau
            schedule.queues[customer.id] = customer.queue
            schedule.service_order.append((customer.id, customer.queue))
        return schedule

    def drain(self) -> "PollingSystem":
        """Serve everything still queued"""
        while self.mode is not ServerMode.IDLE:
            self._fire()
            self.clock = max(self.clock, self.started)
        return self


# module-level spellings of the operations


def add_to_queue(system: PollingSystem, queue: LaneId, arrival: float) -> PollingSystem:
    system.add_to_queue(queue, arrival)
    return system


def simulate(system: PollingSystem) -> Schedule:
    return system.simulate()


def advance(system: PollingSystem, t: float) -> PollingSystem:
    return system.advance(t)


@dataclass
class PollingRun:
    """Outcome of a standalone polling run"""

    customers: List[Customer]
    schedule_times: Dict[int, float]
    max_queue_length: int
    queue_length_samples: List[int]

    def waits(self, lane: Optional[LaneId] = None) -> np.ndarray:
        values = [
            self.schedule_times[c.id] - c.arrival
            for c in self.customers
            if lane is None or c.queue == lane
        ]
        return np.asarray(values, dtype=float)

    @property
    def mean_wait(self) -> float:
        waits = self.waits()
        return float(waits.mean()) if waits.size else 0.0


def merge_arrivals(arrivals: Dict[LaneId, Sequence[float]]) -> List[Tuple[float, LaneId]]:
    """Global time order; simultaneous arrivals go lane 1 first"""
    events = [(float(t), LaneId(lane)) for lane, times in arrivals.items() for t in times]
    events.sort(key=lambda e: (e[0], int(e[1])))
    return events


def run_polling(arrivals: Dict[LaneId, Sequence[float]], policy: PolicyLike,
                service_time: float, switchover_time: float,
                initial_queue: Optional[LaneId] = None) -> PollingRun:
    """Event-driven polling run; W = schedule time - arrival per customer"""
    for lane, times in arrivals.items():
        times = np.asarray(times, dtype=float)
        if times.size > 1 and np.any(np.diff(times) <= 0):
            raise ContractViolation(f"lane {int(lane)} arrivals are not strictly increasing")

    system = PollingSystem(service_time, switchover_time, policy, initial_queue=initial_queue)
    customers = []
    samples = []
    max_queue = 0
    for t, lane in merge_arrivals(arrivals):
        customers.append(system.add_to_queue(lane, t))
        samples.append(system.waiting)
        max_queue = max(max_queue, system.waiting)
    system.drain()

    schedule_times = {customer.id: tau for customer, tau in system.history}
    return PollingRun(customers=customers, schedule_times=schedule_times,
                      max_queue_length=max_queue, queue_length_samples=samples)


@dataclass
class RegularityScenario:
    arrivals: List[Tuple[float, LaneId]]
    inject_time: float
    inject_queue: LaneId
    initial_queue: Optional[LaneId] = None
    service_time: float = 1.0
    switchover_time: float = 0.5


@dataclass
class RegularityWitness:
    passed: bool
    scenario: RegularityScenario
    old_order: List[int]
    new_order: List[int]
    injected_id: int

    def describe(self) -> str:
        verdict = "regular" if self.passed else "NOT regular"
        return (f"{verdict}: old order {self.old_order}, new order {self.new_order} "
                f"(injected {self.injected_id} into queue {int(self.scenario.inject_queue)} "
                f"at t={self.scenario.inject_time:.4f})")


def random_scenario(seed: int, max_customers: int = 12) -> RegularityScenario:
    rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence(int(seed))))
    n = int(rng.integers(0, max_customers + 1))
    s = float(rng.uniform(0.5, 2.0))
    r = float(rng.uniform(0.0, 1.5))
    times = np.sort(rng.uniform(0.0, max(n, 1) * s * 0.8, size=n))
    lanes = rng.integers(1, 3, size=n)
    arrivals = [(float(t), LaneId(int(q))) for t, q in zip(times, lanes)]
    last = float(times[-1]) if n else 0.0
    inject_time = last + float(rng.uniform(0.0, 2.0 * s))
    initial = [None, LaneId.ONE, LaneId.TWO][int(rng.integers(0, 3))]
    return RegularityScenario(arrivals=arrivals, inject_time=inject_time,
                              inject_queue=LaneId(int(rng.integers(1, 3))),
                              initial_queue=initial, service_time=s, switchover_time=r)


def check_regularity(policy: PolicyLike, scenario: Optional[RegularityScenario] = None,
                     seed: int = 0) -> RegularityWitness:
    """Inject one arrival and verify it is only inserted into the service order"""
    if scenario is None:
        scenario = random_scenario(seed)
    system = PollingSystem(scenario.service_time, scenario.switchover_time, policy,
                           initial_queue=scenario.initial_queue)
    for t, lane in sorted(scenario.arrivals, key=lambda e: (e[0], int(e[1]))):
        system.add_to_queue(lane, t)
    system.advance(scenario.inject_time)
    old_order = system.simulate().order_ids()

    injected = system.add_to_queue(scenario.inject_queue, scenario.inject_time)
    new_order = system.simulate().order_ids()

    passed = [cid for cid in new_order if cid != injected.id] == old_order
    passed = passed and new_order.count(injected.id) == 1
    return RegularityWitness(passed=passed, scenario=scenario, old_order=old_order,
                             new_order=new_order, injected_id=injected.id)
