"""
Experiment Manager for the intersection simulator
Runs single scenarios, traffic-light baselines, parameter sweeps and the
property suite, and maps their outcomes to exit codes
"""

import asyncio
import logging
import math
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path
from typing import Any, Dict, Optional, Sequence

from intersection.arrivals import sample_arrivals
from intersection.baseline import run_traffic_light
from intersection.config import ExperimentConfig, config_hash
from intersection.coordinator import EventLog, polling_reference_wait, run, thinning_stats
from intersection.errors import ConfigError, IntersectionError
from intersection.reporting import write_run, write_sweep
from intersection.verification import Injection, PropertySuite

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_PROPERTY = 1
EXIT_CONFIG = 2


def apply_overrides(config: ExperimentConfig, seed: Optional[int] = None,
                    trajectories: bool = False) -> ExperimentConfig:
    """Fold CLI overrides into a validated config"""
    scenario = config.scenario
    if seed is not None:
        scenario = scenario.with_seed(seed)
    if trajectories:
        checks = scenario.checks.model_copy(update={"record_trajectories": True})
        scenario = scenario.model_copy(update={"checks": checks})
    sweep = config.sweep
    if seed is not None and sweep is not None:
        sweep = sweep.model_copy(update={"seeds": [int(seed)]})
    return config.model_copy(update={"scenario": scenario, "sweep": sweep})


def property_failures(log: EventLog) -> Dict[str, int]:
    counters = {
        "collisions": log.collision_failures,
        "delay_bound": log.delay_bound_violations,
        "regularity": log.regularity_violations,
        "membership": log.membership_violations,
        "truncation": log.truncation_violations,
    }
    return {name: count for name, count in counters.items() if count}


def evaluate_point(config: ExperimentConfig, value: float, seed: int,
                   out_dir: Optional[str] = None) -> Dict[str, Any]:
    """One sweep point; runs in a worker process"""
    scenario, light = config.point(value, seed)
    sweep = config.sweep
    p = scenario.params
    arrivals = sample_arrivals(scenario.lane_specs(), scenario.run.horizon, seed, p.service_time)
    log = run(scenario, arrivals)
    stats = thinning_stats(log)
    if out_dir is not None:
        run_dir = Path(out_dir) / "runs" / f"{sweep.axis.value}={value:g}_seed{seed}"
        write_run(run_dir, log, config_hash(scenario))

    row: Dict[str, Any] = {
        "axis": sweep.axis.value,
        "value": float(value),
        "seed": int(seed),
        "mean_delay_s": log.mean_delay,
        "theta_fraction": stats.theta_fraction,
        "theta_intensity_per_s": stats.total_theta,
        "served_intensity_per_s": stats.total_served,
        "polling_mean_wait_s": math.nan,
        "baseline_mean_delay_s": math.nan,
        "delay_ratio": math.nan,
        "collisions": log.collision_failures,
        "conjecture_delay_le_polling_wait": None,
    }
    if sweep.polling_reference:
        wait = polling_reference_wait(scenario)
        row["polling_mean_wait_s"] = wait
        row["conjecture_delay_le_polling_wait"] = log.mean_delay <= wait + 1e-9
    if sweep.baseline:
        baseline = run_traffic_light(scenario, light, arrivals).mean_delay
        row["baseline_mean_delay_s"] = baseline
        if log.mean_delay > 0:
            row["delay_ratio"] = baseline / log.mean_delay
        elif baseline > 0:
            row["delay_ratio"] = math.inf
    return row


class ExperimentManager:
    """Async front end over the simulator, one method per CLI subcommand"""

    def __init__(self, config: Optional[ExperimentConfig], out_dir: str = "results", jobs: int = 1):
        self.config = config
        self.out_dir = Path(out_dir)
        self.jobs = max(int(jobs), 1)

    async def _guard(self, name: str, job) -> int:
        try:
            return await job()
        except ConfigError as e:
            logger.error(f"❌ {name}: configuration error: {e}")
            return EXIT_CONFIG
        except IntersectionError as e:
            logger.error(f"❌ {name} failed: {type(e).__name__}: {e}")
            return EXIT_PROPERTY

    def _require_config(self) -> ExperimentConfig:
        if self.config is None:
            raise ConfigError("this command needs --config")
        return self.config

    async def simulate(self) -> int:
        return await self._guard("simulate", self._simulate)

    async def _simulate(self) -> int:
        scenario = self._require_config().scenario
        log = await asyncio.to_thread(run, scenario)
        paths = write_run(self.out_dir, log, config_hash(scenario),
                          trajectories=scenario.checks.record_trajectories,
                          sample_dt=scenario.checks.trajectory_sample_dt)
        logger.info(f"📁 Wrote {', '.join(p.name for p in paths)} to {self.out_dir}")
        failures = property_failures(log)
        if failures:
            logger.error(f"❌ Property failures: {failures}")
            return EXIT_PROPERTY
        return EXIT_OK

    async def baseline(self) -> int:
        return await self._guard("baseline", self._baseline)

    async def _baseline(self) -> int:
        config = self._require_config()
        log = await asyncio.to_thread(run_traffic_light, config.scenario, config.light)
        paths = write_run(self.out_dir, log, config_hash(config.scenario))
        logger.info(f"📁 Wrote {', '.join(p.name for p in paths)} to {self.out_dir}")
        if log.collision_failures:
            logger.error(f"❌ Traffic-light run had {log.collision_failures} collision instants")
            return EXIT_PROPERTY
        return EXIT_OK

    async def sweep(self) -> int:
        return await self._guard("sweep", self._sweep)

    async def _sweep(self) -> int:
        config = self._require_config()
        if config.sweep is None:
            raise ConfigError("config has no sweep section", field="sweep")
        points = [(value, seed) for value in config.sweep.values for seed in config.sweep.seeds]
        logger.info(f"🚀 Sweeping {config.sweep.axis.value} over {len(config.sweep.values)} values "
                    f"x {len(config.sweep.seeds)} seeds with {self.jobs} workers")
        out = str(self.out_dir)
        if self.jobs == 1:
            rows = [await asyncio.to_thread(evaluate_point, config, value, seed, out)
                    for value, seed in points]
        else:
            loop = asyncio.get_running_loop()
            with ProcessPoolExecutor(max_workers=self.jobs) as pool:
                rows = await asyncio.gather(*[
                    loop.run_in_executor(pool, evaluate_point, config, value, seed, out)
                    for value, seed in points
                ])
        path = write_sweep(self.out_dir, list(rows))
        logger.info(f"📁 Wrote {len(rows)} sweep rows to {path}")
        collisions = sum(row["collisions"] for row in rows)
        if collisions:
            logger.error(f"❌ {collisions} collision instants across the sweep")
            return EXIT_PROPERTY
        return EXIT_OK

    async def verify(self, inject: Sequence[Injection] = (), **suite_options) -> int:
        async def job() -> int:
            suite = PropertySuite(inject=inject, **suite_options)
            report = await asyncio.to_thread(suite.run)
            for line in report.lines():
                print(line)
            return EXIT_OK if report.passed else EXIT_PROPERTY

        return await self._guard("verify", job)

