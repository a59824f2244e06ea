from __future__ import annotations

import logging
from datetime import date

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from druc.ambiguity import build_nominal
from druc.cluster import ED, kmeans
from druc.model import default_fleet
from druc.netload import synthetic_dataset, window

settings.register_profile(
    "druc", deadline=None, max_examples=40, suppress_health_check=[HealthCheck.too_slow]
)
settings.load_profile("druc")

# filled by tests/test_acceptance.py, printed once at the end of the session
ACCEPTANCE: dict[int, tuple[bool, str]] = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(ACCEPTANCE):
        ok, detail = ACCEPTANCE[k]
        terminalreporter.write_line(f"criterion {k:2d}: {'PASS' if ok else 'FAIL'}  {detail}")


@pytest.fixture
def acceptance():
    """Record ``(ok, detail)`` for a criterion, then fail the test if not ok."""

    def record(k: int, ok: bool, detail: str) -> None:
        ACCEPTANCE[k] = (bool(ok), detail)
        assert ok, f"criterion {k}: {detail}"

    return record


@pytest.fixture(autouse=True)
def _quiet_numba():
    logging.getLogger("numba").setLevel(logging.WARNING)


@pytest.fixture(scope="session")
def dataset():
    return synthetic_dataset()


@pytest.fixture(scope="session")
def year(dataset):
    return window(dataset, date(2018, 7, 1), 12)


@pytest.fixture(scope="session")
def fleet():
    return default_fleet()


@pytest.fixture(scope="session")
def desk_nominal(year):
    """Twelve ED-clustered scenarios from a year of synthetic days."""
    return build_nominal(kmeans(year, 12, ED, seed=0), year.N)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
