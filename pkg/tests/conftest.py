import pytest
from hypothesis import HealthCheck, settings

from crystaldislo.crystal import cubic_slip_systems, simple_cubic, validate_slip_systems

settings.register_profile("default", deadline=None, max_examples=40,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


@pytest.fixture(scope="session")
def sc():
    return simple_cubic()


@pytest.fixture(scope="session")
def sc_slips(sc):
    return validate_slip_systems(sc, cubic_slip_systems())


_ACCEPTANCE = {}


@pytest.fixture
def acceptance():
    """Record ``(criterion, passed, detail)`` for the terminal summary."""
    def record(criterion, passed, detail=""):
        _ACCEPTANCE[int(criterion)] = (bool(passed), detail)
    return record


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(_ACCEPTANCE):
        ok, detail = _ACCEPTANCE[k]
        terminalreporter.write_line(f"[{'PASS' if ok else 'FAIL'}] criterion {k}: {detail}")
