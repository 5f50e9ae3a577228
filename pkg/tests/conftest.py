from __future__ import annotations

import numpy as np
import pytest

from conjlab.dynsys import IntegratorConfig, integrate
from conjlab.presets import table1_pairs

RK4_001 = IntegratorConfig("rk4", 0.01)


@pytest.fixture(scope="session")
def table1_runs():
    """{label: (X, Y)} for the three benchmark pairs, T = 30, rk4, dt = 0.01."""
    runs = {}
    for s in table1_pairs():
        X = integrate(s.x_spec, s.x0, 0.0, 30.0, RK4_001)
        Y = integrate(s.y_spec, s.y0, 0.0, 30.0, RK4_001)
        runs[s.label] = (X, Y)
    return runs


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


_ACCEPTANCE: dict[int, str] = {}


@pytest.fixture
def verdict():
    """Record one PASS/FAIL line for an acceptance criterion, then assert it."""

    def record(number: int, ok: bool, detail: str, seconds: float):
        line = f"criterion {number:>2}: {'PASS' if ok else 'FAIL'}  ({seconds:.2f} s)  {detail}"
        _ACCEPTANCE[number] = line
        print(line)
        assert ok, line

    return record


def pytest_terminal_summary(terminalreporter):
    if _ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for k in sorted(_ACCEPTANCE):
            terminalreporter.write_line(_ACCEPTANCE[k])
