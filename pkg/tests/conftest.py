import pytest
from hypothesis import HealthCheck, settings

from qdlock.optics import LensProjector, default_geometry

settings.register_profile(
    "repo", deadline=None, max_examples=60,
    suppress_health_check=[HealthCheck.too_slow],
)
settings.load_profile("repo")

_CRITERIA: list[tuple[str, bool, str]] = []


@pytest.fixture(scope="session")
def geometry():
    return default_geometry()


@pytest.fixture(scope="session")
def projector(geometry):
    phases, geom = geometry
    return LensProjector(phases, geom)


@pytest.fixture
def criterion():
    """Record one acceptance line; the test still asserts on its own."""

    def record(name: str, ok: bool, detail: str = "") -> bool:
        line = (name, bool(ok), detail)
        _CRITERIA.append(line)
        print(f"[{'PASS' if ok else 'FAIL'}] {name}: {detail}")
        return ok

    return record


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for name, ok, detail in _CRITERIA:
        terminalreporter.write_line(f"[{'PASS' if ok else 'FAIL'}] {name}: {detail}")
