import numpy as np
import pytest

from overlapdr.datagen import PRESETS, make_dataset

# (criterion, passed, detail) lines collected by test_acceptance.py
ACCEPTANCE_LINES: list = []


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def good_data():
    return make_dataset(PRESETS["p40_d1"], 400, np.random.default_rng(7))


@pytest.fixture
def poor_data():
    return make_dataset(PRESETS["p10_d3"], 500, np.random.default_rng(11))


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for crit, ok, detail in sorted(ACCEPTANCE_LINES, key=lambda t: t[0]):
        terminalreporter.write_line(f"criterion {crit:>2}: {'PASS' if ok else 'FAIL'}  {detail}")
