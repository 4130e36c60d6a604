"""
Property suite for the intersection simulator
Regularity, LP oracle, trajectory oracle, Matérn statistics and short
coordinated runs with every runtime audit switched on. Failures are
reported, never raised.
"""

import itertools
import logging
import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Callable, List, Optional, Sequence, Tuple

import numpy as np

from intersection.arrivals import ArrivalProcessSpec, generator, matern_intensity, sample_matern
from intersection.config import CheckSettings, MotionSettings, RunSettings, ScenarioConfig
from intersection.coordinator import EventLog, polling_reference_wait, run, thinning_stats
from intersection.errors import InfeasibleMotionError, IntersectionError
from intersection.lp import LinearProgram, LpEngine, solve
from intersection.model import LaneId, State, VehicleParams
from intersection.motion import MotionProblem, motion_synthesize
from intersection.polling import (
    Action,
    PolicyKind,
    PolicyRule,
    PollingPolicy,
    PollingSystem,
    RegularityScenario,
    check_regularity,
)

logger = logging.getLogger(__name__)

REGULAR_POLICIES = (
    PollingPolicy(kind=PolicyKind.EXHAUSTIVE),
    PollingPolicy(kind=PolicyKind.GATED),
    PollingPolicy(kind=PolicyKind.K_LIMITED, k=1),
    PollingPolicy(kind=PolicyKind.K_LIMITED, k=4),
    PollingPolicy(kind=PolicyKind.K_LIMITED, k=8),
)

LP_ORACLE_TOL = 1e-7
DIP_ORACLE_TOL = 1e-3
MATERN_RATES = (0.5, 2.0, 5.0)
MATERN_B = 0.2
SERVED_SLACK = 1.02


class Injection(str, Enum):
    ADVERSARIAL = "adversarial"
    COLLISION = "collision"


@dataclass
class CheckResult:
    name: str
    passed: bool
    detail: str = ""
    gating: bool = True
    witness: Optional[str] = None

    def line(self) -> str:
        mark = "✅" if self.passed else ("❌" if self.gating else "⚠️")
        text = f"{mark} {self.name}: {self.detail}"
        if self.witness:
            text += f"\n    witness: {self.witness}"
        return text


@dataclass
class VerifyReport:
    results: List[CheckResult] = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return all(r.passed for r in self.results if r.gating)

    @property
    def failures(self) -> List[CheckResult]:
        return [r for r in self.results if r.gating and not r.passed]

    def lines(self) -> List[str]:
        return [r.line() for r in self.results]


class LongestQueueRule(PolicyRule):
    """Serve whichever queue is longer; not regular, used as a fixture"""

    name = "longest_queue"

    def decide(self, system: PollingSystem) -> Action:
        own = system.queue_length(system.queue)
        other = system.queue_length(system.queue.other)
        if other > own:
            return Action.SWITCH
        if own:
            return Action.SERVE
        return Action.IDLE


def longest_queue_witness() -> RegularityScenario:
    """Two customers in lane 1, one in lane 2; a second lane-2 arrival flips the order"""
    return RegularityScenario(
        arrivals=[(0.0, LaneId.ONE), (0.1, LaneId.ONE), (0.2, LaneId.TWO)],
        inject_time=0.3,
        inject_queue=LaneId.TWO,
        initial_queue=None,
        service_time=1.0,
        switchover_time=0.5,
    )


# LP oracle


def random_lp(rng: np.random.Generator, n: int = 3, m: int = 3) -> LinearProgram:
    """Bounded, feasible maximization: x = 0 satisfies every row"""
    return LinearProgram(
        objective=rng.uniform(-1.0, 2.0, size=n),
        A_le=rng.uniform(-1.0, 3.0, size=(m, n)),
        b_le=rng.uniform(0.5, 5.0, size=m),
        lo=np.zeros(n),
        hi=rng.uniform(1.0, 4.0, size=n),
    )


def vertex_optimum(lp: LinearProgram) -> float:
    """Best objective over every basic feasible point, by brute force"""
    n = lp.n_vars
    rows = [lp.dense_le()] + [np.eye(n), np.eye(n)]
    A = np.vstack(rows)
    b = np.concatenate([lp.b_le, lp.lo, lp.hi])
    best = -math.inf
    for active in itertools.combinations(range(A.shape[0]), n):
        sub = A[list(active)]
        if abs(np.linalg.det(sub)) < 1e-12:
            continue
        x = np.linalg.solve(sub, b[list(active)])
        if lp.max_violation(x) <= 1e-9:
            best = max(best, float(lp.objective @ x))
    return best


# trajectory oracle


def dip_oracle(times: np.ndarray, t0: float, delay: float, params: VehicleParams) -> np.ndarray:
    """Full speed, then a symmetric brake-and-accelerate dip that loses ``delay`` seconds"""
    v, a = params.v_m, params.a_m
    tf = t0 + params.L / v + delay
    half = math.sqrt(delay * v / a)
    start = tf - 2.0 * half
    t = np.asarray(times, dtype=float)
    cruise = -params.L + v * (t - t0)
    s = t - start
    braking = -params.L + v * (start - t0) + v * s - 0.5 * a * s * s
    r = tf - t
    recovering = -v * r + 0.5 * a * r * r
    return np.where(t <= start, cruise, np.where(t <= start + half, braking, recovering))


class PropertySuite:
    """Runs every property and collects a VerifyReport"""

    def __init__(self, seed: int = 0, regularity_scenarios: int = 1000, lp_cases: int = 200,
                 scenario_seeds: Sequence[int] = (0, 1), scenario_horizon: float = 20.0,
                 scenario_rate: float = 1.5, motion_steps: int = 100,
                 engine: LpEngine = LpEngine.SIMPLEX, dip_steps: int = 800,
                 dip_engine: LpEngine = LpEngine.HIGHS, matern_horizon: float = 1e5,
                 inject: Sequence[Injection] = ()):
        self.seed = seed
        self.regularity_scenarios = regularity_scenarios
        self.lp_cases = lp_cases
        self.scenario_seeds = tuple(scenario_seeds)
        self.scenario_horizon = scenario_horizon
        self.scenario_rate = scenario_rate
        self.motion_steps = motion_steps
        self.engine = LpEngine(engine)
        self.dip_steps = dip_steps
        self.dip_engine = LpEngine(dip_engine)
        self.matern_horizon = matern_horizon
        self.inject = [Injection(i) for i in inject]

    def checks(self) -> List[Tuple[str, Callable[[], CheckResult]]]:
        checks = [
            ("regularity", self.check_regularity),
            ("lp oracle", self.check_lp_oracle),
            ("trajectory dip oracle", self.check_dip_oracle),
            ("matern intensity", self.check_matern),
            ("coordinated runs", self.check_coordinated_runs),
            ("delay conjecture", self.check_delay_conjecture),
        ]
        if Injection.ADVERSARIAL in self.inject:
            checks.append(("adversarial policy", self.check_adversarial_policy))
        if Injection.COLLISION in self.inject:
            checks.append(("under-length control region", self.check_under_length))
        return checks

    def run(self) -> VerifyReport:
        report = VerifyReport()
        logger.info(f"🔍 Running property suite ({len(self.checks())} checks, seed {self.seed})")
        for name, check in self.checks():
            try:
                result = check()
            except IntersectionError as e:
                result = CheckResult(name=name, passed=False, detail=f"{type(e).__name__}: {e}")
            report.results.append(result)
            log = logger.info if result.passed or not result.gating else logger.error
            log(result.line())
        status = "✅ All properties hold" if report.passed else f"❌ {len(report.failures)} properties failed"
        logger.info(status)
        return report

    # individual checks

    def check_regularity(self) -> CheckResult:
        checked = 0
        for policy in REGULAR_POLICIES:
            for k in range(self.regularity_scenarios):
                witness = check_regularity(policy, seed=self.seed * 1_000_003 + k)
                checked += 1
                if not witness.passed:
                    return CheckResult("regularity", False,
                                       f"{policy.label} broke the service order in scenario {k}",
                                       witness=witness.describe())
        return CheckResult("regularity", True,
                           f"{checked} scenarios over {len(REGULAR_POLICIES)} policies")

    def check_adversarial_policy(self) -> CheckResult:
        witness = check_regularity(LongestQueueRule(), scenario=longest_queue_witness())
        detail = "longest-queue policy kept the service order" if witness.passed \
            else "longest-queue policy reordered the schedule"
        return CheckResult("adversarial policy", witness.passed, detail, witness=witness.describe())

    def check_lp_oracle(self) -> CheckResult:
        rng = generator(self.seed)
        worst = 0.0
        for case in range(self.lp_cases):
            lp = random_lp(rng)
            expected = vertex_optimum(lp)
            solution = solve(lp)
            if not solution.optimal:
                return CheckResult("lp oracle", False, f"case {case} ended {solution.status.value}")
            gap = abs(solution.objective_value - expected)
            worst = max(worst, gap)
            if gap > LP_ORACLE_TOL * max(1.0, abs(expected)):
                return CheckResult("lp oracle", False,
                                   f"case {case}: simplex {solution.objective_value:.10f} "
                                   f"vs vertices {expected:.10f}")
        return CheckResult("lp oracle", True, f"{self.lp_cases} programs, worst gap {worst:.2e}")

    def check_dip_oracle(self, delay: float = 0.2) -> CheckResult:
        params = VehicleParams()
        t0 = 0.0
        problem = MotionProblem(initial_state=State(-params.L, params.v_m), t0=t0,
                                tf=t0 + params.L / params.v_m + delay, params=params,
                                n_steps=self.dip_steps)
        result = motion_synthesize(problem, engine=self.dip_engine)
        if not result.feasible:
            return CheckResult("trajectory dip oracle", False, f"solver ended {result.status.value}")
        times = result.trajectory.times()
        gap = float(np.abs(result.trajectory.positions - dip_oracle(times, t0, delay, params)).max())
        return CheckResult("trajectory dip oracle", gap <= DIP_ORACLE_TOL,
                           f"worst position gap {gap:.2e} m over {times.size} nodes")

    def check_matern(self) -> CheckResult:
        parts = []
        passed = True
        for i, rate in enumerate(MATERN_RATES):
            points = sample_matern(rate, MATERN_B, self.matern_horizon, self.seed + i)
            expected = matern_intensity(rate, MATERN_B)
            empirical = points.size / self.matern_horizon
            # poisson-count standard error
            se = math.sqrt(expected / self.matern_horizon)
            z = (empirical - expected) / se
            passed = passed and abs(z) <= 3.0
            parts.append(f"λ={rate}: {empirical:.4f} vs {expected:.4f} (z={z:+.2f})")
        return CheckResult("matern intensity", passed, "; ".join(parts))

    def scenario(self, seed: int, L: Optional[float] = None, rate: Optional[float] = None,
                 truncation: bool = True) -> ScenarioConfig:
        params = VehicleParams() if L is None else VehicleParams(L=L)
        spec = ArrivalProcessSpec(rate=self.scenario_rate if rate is None else rate)
        return ScenarioConfig(
            params=params,
            lanes={1: spec, 2: spec},
            run=RunSettings(horizon=self.scenario_horizon, seed=seed,
                            assumption_override=not params.meets_length_assumption),
            motion=MotionSettings(n_steps=self.motion_steps, engine=self.engine),
            checks=CheckSettings(check_truncation=truncation, fail_fast=False),
        )

    def check_coordinated_runs(self) -> CheckResult:
        totals = {"vehicles": 0, "collisions": 0, "delay bound": 0, "regularity": 0,
                  "truncation": 0, "membership": 0, "throughput": 0}
        for seed in self.scenario_seeds:
            log: EventLog = run(self.scenario(seed))
            stats = thinning_stats(log)
            totals["vehicles"] += len(log.accepted())
            totals["collisions"] += log.collision_failures
            totals["delay bound"] += log.delay_bound_violations
            totals["regularity"] += log.regularity_violations
            totals["truncation"] += log.truncation_violations
            totals["membership"] += log.membership_violations
            if stats.total_served > SERVED_SLACK / log.params.service_time:
                totals["throughput"] += 1
        failures = {k: v for k, v in totals.items() if k != "vehicles" and v}
        detail = f"{totals['vehicles']} vehicles over seeds {list(self.scenario_seeds)}"
        if failures:
            detail += ", violations " + ", ".join(f"{k}={v}" for k, v in failures.items())
        return CheckResult("coordinated runs", not failures, detail)

    def check_delay_conjecture(self) -> CheckResult:
        """Coordinated mean delay against the Poisson-fed polling wait; reported, never gating"""
        parts = []
        holds = True
        for seed in self.scenario_seeds:
            config = self.scenario(seed, truncation=False)
            delay = run(config).mean_delay
            wait = polling_reference_wait(config)
            holds = holds and delay <= wait + 1e-9
            parts.append(f"seed {seed}: delay {delay:.4f}s vs polling wait {wait:.4f}s")
        return CheckResult("delay conjecture", holds, "; ".join(parts), gating=False)

    def check_under_length(self) -> CheckResult:
        """Short control region under heavy load; the failure must come back as a report"""
        config = self.scenario(self.seed, L=15.0, rate=2.4, truncation=False)
        try:
            log = run(config)
        except InfeasibleMotionError as e:
            return CheckResult("under-length control region", False,
                               f"motion synthesis infeasible: {e}",
                               witness=f"state dump keys {sorted(e.dump)}")
        except IntersectionError as e:
            return CheckResult("under-length control region", False, f"{type(e).__name__}: {e}")
        if log.collision_failures:
            t, pairs = log.collisions[0]
            return CheckResult("under-length control region", False,
                               f"{log.collision_failures} collision instants",
                               witness=f"t={t:.4f}s pairs {pairs}")
        return CheckResult("under-length control region", True, "no safety failure surfaced")


def run_suite(**kwargs) -> VerifyReport:
    return PropertySuite(**kwargs).run()
