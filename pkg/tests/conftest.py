import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from rhmm.geometry import DiskGaussian, SpdGaussian, VonMisesFisher

settings.register_profile("default", deadline=None, max_examples=40,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


ALL_FAMILIES = [VonMisesFisher(3), DiskGaussian(), SpdGaussian(2)]


@pytest.fixture(params=ALL_FAMILIES, ids=lambda f: f.name)
def family(request):
    return request.param


_ACCEPTANCE: dict[int, str] = {}


@pytest.fixture
def acceptance():
    """Record one PASS/FAIL line per acceptance criterion, then assert it."""

    def record(number: int, passed: bool, detail: str):
        line = f"{'PASS' if passed else 'FAIL'} criterion {number}: {detail}"
        _ACCEPTANCE[number] = line
        print(line)
        assert passed, line

    return record


def pytest_terminal_summary(terminalreporter):
    if _ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for k in sorted(_ACCEPTANCE):
            terminalreporter.write_line(_ACCEPTANCE[k])
