"""
Arrival generation for the intersection simulator
Poisson and Matérn type-II hard-core arrival streams per lane, and the
analytic Matérn intensity
"""

import logging
import math
from enum import Enum
from typing import Dict, Optional, Union

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, model_validator

from intersection.errors import ContractViolation
from intersection.model import LANES, LaneId

logger = logging.getLogger(__name__)

SeedLike = Union[int, np.random.SeedSequence, np.random.Generator]


class ArrivalKind(str, Enum):
    POISSON = "poisson"
    MATERN = "matern"


class ArrivalProcessSpec(BaseModel):
    """One lane's arrival process

    ``rate`` is the underlying Poisson rate. ``intensity`` instead fixes the
    per-lane rate of the arrivals that survive thinning; set one or the other.
    """

    model_config = ConfigDict(frozen=True, extra="forbid", populate_by_name=True)

    kind: ArrivalKind = ArrivalKind.MATERN
    rate: Optional[float] = Field(None, ge=0, alias="lambda")
    intensity: Optional[float] = Field(None, ge=0)
    hard_core_b: Optional[float] = Field(None, gt=0)

    @model_validator(mode="before")
    @classmethod
    def _default_rate(cls, data):
        if isinstance(data, dict) and all(data.get(key) is None for key in ("rate", "lambda", "intensity")):
            data = {k: v for k, v in data.items() if k != "lambda"}
            data["rate"] = 1.0
        return data

    @model_validator(mode="after")
    def _check_kind(self):
        if self.rate is not None and self.intensity is not None:
            raise ValueError("set either rate or intensity, not both")
        if self.kind is ArrivalKind.POISSON and self.hard_core_b is not None:
            raise ValueError("hard_core_b only applies to matern arrivals")
        return self

    def effective_b(self, service_time: float) -> float:
        """Hard core used when feeding the coordinator; defaults to l/v_m"""
        return self.hard_core_b if self.hard_core_b is not None else service_time

    def underlying_rate(self, service_time: float) -> float:
        if self.intensity is None:
            return float(self.rate)
        if self.kind is ArrivalKind.POISSON:
            return float(self.intensity)
        return matern_rate_for_intensity(self.intensity, self.effective_b(service_time))


def generator(seed: SeedLike) -> np.random.Generator:
    if isinstance(seed, np.random.Generator):
        return seed
    if isinstance(seed, np.random.SeedSequence):
        return np.random.Generator(np.random.PCG64(seed))
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(int(seed))))


def lane_generators(seed: int) -> Dict[LaneId, np.random.Generator]:
    """Independent per-lane streams; lane 1 takes the first spawned child"""
    children = np.random.SeedSequence(int(seed)).spawn(len(LANES))
    return {lane: generator(child) for lane, child in zip(LANES, children)}


def _poisson_on(rng: np.random.Generator, rate: float, length: float) -> np.ndarray:
    """Exponential-gap Poisson points on [0, length)"""
    if rate <= 0 or length <= 0:
        return np.empty(0)
    expected = rate * length
    chunk = int(expected + 6.0 * math.sqrt(expected) + 16)
    pieces = []
    t = 0.0
    while True:
        points = t + np.cumsum(rng.exponential(1.0 / rate, size=chunk))
        inside = points[points < length]
        pieces.append(inside)
        if inside.size < points.size:
            break
        t = float(points[-1])
    return np.concatenate(pieces)


def sample_poisson(rate: float, horizon: float, seed: SeedLike) -> np.ndarray:
    """Increasing Poisson arrival times on [0, horizon)"""
    if rate <= 0:
        raise ContractViolation(f"poisson rate must be positive, got {rate}")
    return _poisson_on(generator(seed), rate, horizon)


def sample_matern(rate: float, b: float, horizon: float, seed: SeedLike) -> np.ndarray:
    """Matérn type-II thinning of a Poisson stream; surviving gaps exceed ``b``

    Points are drawn on [-b, horizon + b] so points near the edges compete
    with neighbours outside the window, then cropped to [0, horizon).
    """
    if rate <= 0:
        raise ContractViolation(f"matern rate must be positive, got {rate}")
    if b <= 0:
        raise ContractViolation(f"matern hard core must be positive, got {b}")
    if horizon <= 0:
        return np.empty(0)

    rng = generator(seed)
    points = _poisson_on(rng, rate, horizon + 2.0 * b) - b
    marks = rng.uniform(0.0, 1.0, size=points.size)
    n = points.size
    if n == 0:
        return points

    lo = np.searchsorted(points, points - b, side="left")
    hi = np.searchsorted(points, points + b, side="right")
    reach = int(max((hi - np.arange(n)).max(), (np.arange(n) - lo).max() + 1))
    index = np.arange(n)
    deleted = np.zeros(n, dtype=bool)
    for k in range(1, reach + 1):
        # later neighbour wins only with a strictly larger mark
        ahead = index + k
        valid = ahead < hi
        ahead_c = np.minimum(ahead, n - 1)
        deleted |= valid & (marks[ahead_c] > marks)
        # earlier neighbour also wins ties
        behind = index - k
        valid = behind >= lo
        behind_c = np.maximum(behind, 0)
        deleted |= valid & (marks[behind_c] >= marks)

    kept = points[~deleted]
    return kept[(kept >= 0.0) & (kept < horizon)]


def matern_intensity(rate: float, b: float) -> float:
    """Intensity (1 - exp(-2 rate b)) / (2 b) of the thinned process"""
    if rate < 0:
        raise ContractViolation(f"rate must be non-negative, got {rate}")
    if b <= 0:
        raise ContractViolation(f"hard core must be positive, got {b}")
    return float(-math.expm1(-2.0 * rate * b) / (2.0 * b))


def matern_rate_for_intensity(intensity: float, b: float) -> float:
    """Underlying rate whose thinned process has the given intensity"""
    if intensity < 0:
        raise ContractViolation(f"intensity must be non-negative, got {intensity}")
    if b <= 0:
        raise ContractViolation(f"hard core must be positive, got {b}")
    if 2.0 * intensity * b >= 1.0:
        raise ContractViolation(f"intensity {intensity} is not below the hard-core limit {1.0 / (2.0 * b):g}")
    return float(-math.log1p(-2.0 * intensity * b) / (2.0 * b))


def sample_lane(spec: ArrivalProcessSpec, horizon: float, rng: np.random.Generator,
                service_time: float) -> np.ndarray:
    rate = spec.underlying_rate(service_time)
    if rate <= 0 or horizon <= 0:
        return np.empty(0)
    if spec.kind is ArrivalKind.POISSON:
        return sample_poisson(rate, horizon, rng)
    return sample_matern(rate, spec.effective_b(service_time), horizon, rng)


def sample_arrivals(specs: Dict[LaneId, ArrivalProcessSpec], horizon: float, seed: int,
                    service_time: float) -> Dict[LaneId, np.ndarray]:
    """Arrival times for both lanes from one master seed"""
    streams = lane_generators(seed)
    arrivals = {}
    for lane in LANES:
        spec = specs.get(lane)
        if spec is None:
            arrivals[lane] = np.empty(0)
            continue
        arrivals[lane] = sample_lane(spec, horizon, streams[lane], service_time)
        logger.debug(f"lane {int(lane)}: {arrivals[lane].size} arrivals over {horizon}s")
    return arrivals
