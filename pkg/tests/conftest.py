import os

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

settings.register_profile(
    "default", max_examples=60, deadline=None,
    suppress_health_check=[HealthCheck.too_slow],
)
settings.register_profile("thorough", max_examples=500, deadline=None)
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "default"))

RAYS = 61


def scan(front=5.0, rest=5.0, n=RAYS):
    """A scan with every front-sector ray at ``front`` and the others at ``rest``."""
    from ri_switch.builtins import front_sector
    r = np.full(n, rest, dtype=float)
    r[front_sector(n)] = front
    return r


@pytest.fixture
def make_scan():
    return scan


# one line per acceptance criterion, repeated at the end of the run
ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)
