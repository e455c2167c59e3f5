"""Shared fixtures, the hypothesis profile and the acceptance summary."""

from __future__ import annotations

from typing import List

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

settings.register_profile(
    "ldme",
    derandomize=True,
    deadline=None,
    max_examples=60,
    suppress_health_check=[HealthCheck.too_slow, HealthCheck.data_too_large],
)
settings.load_profile("ldme")

ACCEPTANCE_LINES: List[str] = []


def record_verdict(criterion: int, passed: bool, detail: str) -> None:
    line = f"criterion {criterion}: {'PASS' if passed else 'FAIL'} | {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)


@pytest.fixture
def verdict():
    return record_verdict


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
        terminalreporter.write_line(line)
