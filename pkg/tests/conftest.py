import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from windemos import data  # noqa: E402

ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


@pytest.fixture(scope="session")
def small_config():
    return data.SyntheticConfig(station_count=8, date_count=100, lead_count=3, members_low_total=12,
                                members_high_total=6, seed=7)


@pytest.fixture(scope="session")
def small_dataset(small_config):
    return data.generate(small_config)
