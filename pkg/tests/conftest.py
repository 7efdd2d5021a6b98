import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from polymerlab.env import EnvironmentSpec

settings.register_profile(
    "default", max_examples=40, deadline=None, suppress_health_check=[HealthCheck.too_slow]
)
settings.load_profile("default")

FAMILY_SPECS = [
    EnvironmentSpec("Constant"),
    EnvironmentSpec("TwoPoint", {"a": 0.5, "b": 1.5, "p": 0.5}),
    EnvironmentSpec("TwoPoint", {"a": 0.0, "b": 2.0, "p": 0.5}),
    EnvironmentSpec("LogNormal", {"beta": 0.7}),
    EnvironmentSpec("ParetoTail", {"alpha": 1.5}),
]


@pytest.fixture(params=FAMILY_SPECS, ids=lambda s: f"{s.family}-{'-'.join(f'{v:g}' for v in s.params.values())}")
def family_spec(request):
    return request.param


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


# acceptance lines, printed again at the end of the session
ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
