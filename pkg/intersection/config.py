"""
Configuration for the intersection simulator
Scenario files (TOML with dotted keys), validated pydantic models and
process-level settings loaded from the environment
"""

import hashlib
import json
import logging
import os
import re
try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib
from dataclasses import dataclass
from enum import Enum
from pathlib import Path
from typing import Any, Dict, List, Optional, Tuple

from dotenv import load_dotenv
from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator

from intersection.arrivals import ArrivalKind, ArrivalProcessSpec
from intersection.errors import ConfigError
from intersection.lp import LpEngine, Pricing
from intersection.model import LANES, LaneId, VehicleParams
from intersection.polling import PollingPolicy

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class EnvironmentSettings:
    """Process-level knobs; explicit CLI flags win over these"""

    log_level: str = "INFO"
    jobs: int = 1
    lp_engine: LpEngine = LpEngine.HIGHS
    output_dir: str = "results"

    @classmethod
    def from_env(cls) -> "EnvironmentSettings":
        load_dotenv()
        try:
            jobs = int(os.getenv("INTERSECTION_JOBS", "1"))
        except ValueError:
            raise ConfigError("INTERSECTION_JOBS must be an integer", field="INTERSECTION_JOBS")
        try:
            engine = LpEngine(os.getenv("INTERSECTION_LP_ENGINE", LpEngine.HIGHS.value).lower())
        except ValueError:
            raise ConfigError("INTERSECTION_LP_ENGINE must be simplex or highs",
                              field="INTERSECTION_LP_ENGINE")
        return cls(
            log_level=os.getenv("INTERSECTION_LOG_LEVEL", "INFO").upper(),
            jobs=max(jobs, 1),
            lp_engine=engine,
            output_dir=os.getenv("INTERSECTION_OUTPUT_DIR", "results"),
        )


class _Section(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")


class RunSettings(_Section):
    horizon: float = Field(1000.0, gt=0, description="arrival window (s)")
    dt_sim: float = Field(0.01, gt=0, description="collision-check cadence (s)")
    seed: int = Field(0, ge=0)
    initial_queue: Optional[LaneId] = None
    assumption_override: bool = False


class MotionSettings(_Section):
    n_steps: int = Field(800, ge=1)
    engine: LpEngine = LpEngine.HIGHS
    pricing: Pricing = Pricing.BLAND


class CheckSettings(_Section):
    collision_check: bool = True
    collision_tol: float = Field(1e-6, ge=0)
    membership_tol: float = Field(1e-3, ge=0)
    check_truncation: bool = False
    truncation_tol: float = Field(1e-4, gt=0)
    fail_fast: bool = True
    record_trajectories: bool = False
    trajectory_sample_dt: float = Field(0.1, gt=0)


def _default_lanes() -> Dict[int, ArrivalProcessSpec]:
    return {int(lane): ArrivalProcessSpec() for lane in LANES}


class ScenarioConfig(_Section):
    """Everything a single coordinated or traffic-light run needs"""

    params: VehicleParams = Field(default_factory=VehicleParams)
    lanes: Dict[int, ArrivalProcessSpec] = Field(default_factory=_default_lanes)
    policy: PollingPolicy = Field(default_factory=PollingPolicy)
    run: RunSettings = Field(default_factory=RunSettings)
    motion: MotionSettings = Field(default_factory=MotionSettings)
    checks: CheckSettings = Field(default_factory=CheckSettings)

    @field_validator("lanes")
    @classmethod
    def _known_lanes(cls, lanes):
        unknown = sorted(set(lanes) - {int(lane) for lane in LANES})
        if unknown:
            raise ValueError(f"unknown lane ids {unknown}; lanes are 1 and 2")
        return lanes

    @model_validator(mode="after")
    def _hard_core(self):
        s = self.params.service_time
        for lane, spec in self.lanes.items():
            if spec.kind is ArrivalKind.MATERN and spec.hard_core_b is not None \
                    and spec.hard_core_b < s - 1e-12:
                raise ValueError(f"lane {lane} hard_core_b {spec.hard_core_b} is below l/v_m = {s}")
            if spec.kind is ArrivalKind.MATERN and spec.intensity is not None:
                limit = 1.0 / (2.0 * spec.effective_b(s))
                if spec.intensity >= limit:
                    raise ValueError(f"lane {lane} intensity {spec.intensity} is not below the "
                                     f"hard-core limit {limit:g}")
        return self

    def lane_specs(self) -> Dict[LaneId, ArrivalProcessSpec]:
        return {LaneId(lane): spec for lane, spec in self.lanes.items()}

    @property
    def seed(self) -> int:
        return self.run.seed

    def with_seed(self, seed: int) -> "ScenarioConfig":
        return self.model_copy(update={"run": self.run.model_copy(update={"seed": int(seed)})})


class LightConfig(_Section):
    """Staggered green / yellow / red cycle of the traffic-light baseline"""

    green_red_duration: float = Field(10.0, gt=0)
    yellow_duration: Optional[float] = Field(None, gt=0, description="None uses the safe minimum")


class SweepAxis(str, Enum):
    LAMBDA = "lambda"
    INTENSITY = "intensity"
    L = "L"
    GREEN = "green"


class SweepSettings(_Section):
    axis: SweepAxis
    values: List[float] = Field(min_length=1)
    seeds: List[int] = Field(default_factory=lambda: [0])
    polling_reference: bool = False
    baseline: bool = False

    @field_validator("seeds")
    @classmethod
    def _distinct_seeds(cls, seeds):
        if len(set(seeds)) != len(seeds):
            raise ValueError("seeds must be distinct")
        if any(seed < 0 for seed in seeds):
            raise ValueError("seeds must be non-negative")
        return seeds


class ExperimentConfig(_Section):
    scenario: ScenarioConfig = Field(default_factory=ScenarioConfig)
    light: LightConfig = Field(default_factory=LightConfig)
    sweep: Optional[SweepSettings] = None
    output_dir: Optional[str] = None

    def point(self, value: float, seed: int) -> Tuple[ScenarioConfig, LightConfig]:
        """Scenario and light settings of one sweep point"""
        if self.sweep is None:
            raise ConfigError("config has no sweep section", field="sweep")
        data = self.scenario.model_dump(mode="python")
        light = self.light
        axis = self.sweep.axis
        if axis is SweepAxis.LAMBDA:
            for spec in data["lanes"].values():
                spec.update(rate=float(value), intensity=None)
        elif axis is SweepAxis.INTENSITY:
            for spec in data["lanes"].values():
                spec.update(rate=None, intensity=float(value))
        elif axis is SweepAxis.L:
            data["params"]["L"] = float(value)
        else:
            light = self.light.model_copy(update={"green_red_duration": float(value)})
        data["run"]["seed"] = int(seed)
        try:
            return ScenarioConfig.model_validate(data), LightConfig.model_validate(light.model_dump())
        except ValidationError as e:
            raise _as_config_error(e, prefix=f"sweep value {value}: ")


SECTIONS_OUTSIDE_SCENARIO = ("light", "sweep", "output_dir")

_LINE_PATTERN = re.compile(r"line (\d+)")


def _as_config_error(error: ValidationError, prefix: str = "") -> ConfigError:
    first = error.errors()[0]
    location = [str(part) for part in first["loc"]]
    if location and location[0] == "scenario":
        location = location[1:]
    return ConfigError(f"{prefix}{first['msg']}", field=".".join(location) or None)


def parse_config(text: str, env: Optional[EnvironmentSettings] = None) -> ExperimentConfig:
    """Parse and validate a scenario document"""
    try:
        document = tomllib.loads(text)
    except tomllib.TOMLDecodeError as e:
        match = _LINE_PATTERN.search(str(e))
        line = getattr(e, "lineno", None) or (int(match.group(1)) if match else None)
        raise ConfigError(str(e).split(" (at")[0], line=line)

    scenario: Dict[str, Any] = {k: v for k, v in document.items() if k not in SECTIONS_OUTSIDE_SCENARIO}
    if env is not None:
        motion = dict(scenario.get("motion", {}))
        motion.setdefault("engine", env.lp_engine.value)
        scenario["motion"] = motion
    payload = {k: document[k] for k in SECTIONS_OUTSIDE_SCENARIO if k in document}
    payload["scenario"] = scenario
    try:
        return ExperimentConfig.model_validate(payload)
    except ValidationError as e:
        raise _as_config_error(e)


def load_config(path: str, env: Optional[EnvironmentSettings] = None) -> ExperimentConfig:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as e:
        raise ConfigError(f"cannot read config {path}: {e.strerror or e}")
    config = parse_config(text, env)
    logger.info(f"🔧 Loaded config {path} (hash {config_hash(config.scenario)})")
    return config


def config_hash(model: BaseModel) -> str:
    """First 16 hex chars of sha256 over the canonical JSON dump"""
    canonical = json.dumps(model.model_dump(mode="json"), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canonical.encode("utf-8")).hexdigest()[:16]
