from __future__ import annotations

import sys
from pathlib import Path

import httpx
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from ldm.api import BackgroundServer  # noqa: E402
from ldm.config import ServiceConfig  # noqa: E402
from ldm.service import LocalDynamicMap  # noqa: E402


class FakeClock:
    """Settable millisecond clock."""

    def __init__(self, now: int = 1_000_000) -> None:
        self.now = now

    def __call__(self) -> int:
        return self.now


@pytest.fixture
def clock() -> FakeClock:
    return FakeClock()


@pytest.fixture
def ldm(clock) -> LocalDynamicMap:
    service = LocalDynamicMap(ServiceConfig(long_poll_s=1.0), clock=clock)
    yield service
    service.close()


@pytest.fixture
def live(ldm):
    """A running HTTP server around ``ldm`` plus a client bound to it."""
    with BackgroundServer(ldm) as server:
        with httpx.Client(base_url=server.url, timeout=10.0) as client:
            yield ldm, client


ACCEPTANCE_RESULTS: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_RESULTS:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_RESULTS:
            terminalreporter.write_line(line)
