import textwrap

import pytest

from intersection.arrivals import ArrivalProcessSpec
from intersection.config import CheckSettings, MotionSettings, RunSettings, ScenarioConfig
from intersection.lp import LpEngine
from intersection.model import VehicleParams


@pytest.fixture
def params():
    return VehicleParams()


@pytest.fixture
def make_scenario():
    """Small coordinated scenarios that the embedded simplex solves quickly"""

    def build(rate=0.5, horizon=6.0, seed=0, n_steps=24, engine=LpEngine.SIMPLEX, **checks):
        spec = ArrivalProcessSpec(rate=rate)
        return ScenarioConfig(
            lanes={1: spec, 2: spec},
            run=RunSettings(horizon=horizon, seed=seed),
            motion=MotionSettings(n_steps=n_steps, engine=engine),
            checks=CheckSettings(**checks),
        )

    return build


@pytest.fixture
def write_config(tmp_path):
    def write(text, name="scenario.toml"):
        path = tmp_path / name
        path.write_text(textwrap.dedent(text), encoding="utf-8")
        return path

    return write
