"""Pytest configuration and fixtures."""

import sys
from pathlib import Path

import pytest

# Add project root to path
sys.path.insert(0, str(Path(__file__).parent.parent))

from runner.config import DetectionSettings, EstimationSettings, ScenarioConfig, SensitivitySettings  # noqa: E402
from server.event_bus import EventBus  # noqa: E402
from store.timeseries import TimeSeriesStore  # noqa: E402
from testbed.enactment import NoiseSpec  # noqa: E402
from testbed.params import CraneParams  # noqa: E402
from twin.metrics import MetricConfig  # noqa: E402

CONFIGS = Path(__file__).parent.parent / "configs"


@pytest.fixture(autouse=True)
def _no_store_override(monkeypatch):
    """Keep a developer's TWINWATCH_STORE out of the tests."""
    monkeypatch.delenv("TWINWATCH_STORE", raising=False)


@pytest.fixture
def params():
    """Nominal crane parameters."""
    return CraneParams()


@pytest.fixture
def noiseless():
    return NoiseSpec.noiseless()


@pytest.fixture
def store(tmp_path):
    """Empty store with the crane and every quantity registered."""
    s = TimeSeriesStore(tmp_path / "store")
    s.ensure_machine(1, "gantry-crane")
    s.ensure_quantities()
    return s


@pytest.fixture
def bus():
    b = EventBus()
    yield b
    b.close()


@pytest.fixture
def small_config(tmp_path):
    """A scenario config small enough for unit tests (few runs, few replications)."""
    return ScenarioConfig(
        replications=8,
        calibration_runs=4,
        runs=4,
        seed=11,
        metrics=MetricConfig(eps_mean_by_quantity={"velocity": 0.005, "angular_position": 0.002}),
        output_dir=tmp_path / "out",
        sensitivity=SensitivitySettings(deltas=(-0.10, -0.02, 0.0, 0.02, 0.10), runs_per_delta=3, nominal_runs=6),
        detection=DetectionSettings(deltas=(0.05, 0.20), runs_per_delta=3, normal_runs=4),
        estimation=EstimationSettings(runs=3),
    )


@pytest.fixture(scope="session")
def configs_dir():
    return CONFIGS
