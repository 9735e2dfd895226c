import numpy as np
import pytest

from aqfusion.inference import SamplerConfig, weak_priors
from aqfusion.measurement import build_rows
from aqfusion.synth import SynthSpec, generate


@pytest.fixture(scope="session")
def small_campaign():
    """Short campaign: 4 stations, 3 sensors, 80 traffic hours."""
    return generate(SynthSpec(nx=20, ny=20, n_sensors=3, n_hours=80, seed=3))


@pytest.fixture(scope="session")
def small_rows(small_campaign):
    return build_rows(small_campaign.observations)


@pytest.fixture(scope="session")
def quick_config():
    return SamplerConfig(n_adapt=400, n_burn=100, n_keep=200, n_chains=2, seed=11)


@pytest.fixture(scope="session")
def priors():
    return weak_priors()


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


ACCEPTANCE_LINES = {}


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for key in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(ACCEPTANCE_LINES[key])
