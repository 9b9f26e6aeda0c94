import os
import sys

import pytest

sys.path.insert(0, os.path.dirname(__file__))

from pfspad.config import (ConventionalConfig, QisConfig, SpadConfig)  # noqa: E402

T_DEFAULT = 5e-3
TAU_D = 149.7e-9


@pytest.fixture
def spad_proto():
    return SpadConfig(quantum_efficiency=0.4, dead_time=TAU_D, dark_rate=100.0,
                      afterpulse_prob=0.01)


@pytest.fixture
def spad_ideal():
    return SpadConfig(quantum_efficiency=0.4, dead_time=TAU_D)


@pytest.fixture
def conventional_ref():
    return ConventionalConfig(quantum_efficiency=0.9, full_well=33400, read_noise=5.0)


@pytest.fixture
def qis_matched():
    return QisConfig(quantum_efficiency=0.4, bin_width=TAU_D)


# acceptance results collected by tests/test_acceptance.py
ACCEPTANCE_RESULTS: dict = {}


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if not ACCEPTANCE_RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(ACCEPTANCE_RESULTS):
        passed, detail = ACCEPTANCE_RESULTS[key]
        terminalreporter.write_line(f"criterion {key:2d}: {'PASS' if passed else 'FAIL'}  {detail}")
