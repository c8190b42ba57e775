from pathlib import Path

import pytest
from hypothesis import HealthCheck, settings

from ames.engine import EngineParams, formed_cluster
from ames.types import ProcessId, TimeoutConfig

SCENARIOS = Path(__file__).resolve().parent.parent / "scenarios"

settings.register_profile("default", deadline=None, suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")

MEASUREMENT = b"\x11" * 32


def pids(n):
    return [ProcessId(i, f"h{i}") for i in range(1, n + 1)]


def make_params(lo_ms=50, hi_ms=150, factor=5.0, sla_max=8, seed=0):
    return EngineParams(TimeoutConfig(lo_ms * 1000, hi_ms * 1000, factor), sla_max=sla_max, seed=seed)


def cluster(n, **kw):
    """A formed cluster in term 1 with p1 leading; returns (params, members, procs)."""
    params = make_params(**kw)
    ms = pids(n)
    return params, ms, formed_cluster(params, ms, b"secret", measurement=MEASUREMENT)


@pytest.fixture
def five():
    return cluster(5)


def scenario_path(name):
    return SCENARIOS / f"{name}.scn"


# one line per acceptance criterion, echoed after the run
ACCEPTANCE_LINES: list = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split("criterion ")[1].split(":")[0])):
            terminalreporter.write_line(line)
