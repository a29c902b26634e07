import os
from pathlib import Path

import pytest

ACCEPTANCE_LINES = []


@pytest.fixture(scope="session")
def data_root():
    return Path(os.environ.get("ISINGDROP_DATA", "/root/data"))


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
