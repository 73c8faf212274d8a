import numpy as np
import pytest
from hypothesis import HealthCheck, settings

settings.register_profile(
    "default", deadline=None, max_examples=40,
    suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


@pytest.fixture
def rng():
    return np.random.default_rng(20240601)


def crandn(rng, *shape):
    return rng.standard_normal(shape) + 1j * rng.standard_normal(shape)


def pytest_configure(config):
    config.acceptance_lines = []


@pytest.fixture
def criterion(request):
    """Record one ``PASS/FAIL criterion n: ...`` line for the summary."""
    def record(n, ok, detail):
        line = f"{'PASS' if ok else 'FAIL'} criterion {n}: {detail}"
        request.config.acceptance_lines.append(line)
        print(line)
        return ok
    return record


def pytest_terminal_summary(terminalreporter, config):
    lines = getattr(config, "acceptance_lines", [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines, key=lambda s: int(s.split()[2].rstrip(":"))):
            terminalreporter.write_line(line)
