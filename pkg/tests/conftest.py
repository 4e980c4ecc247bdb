import logging

import pytest

from ergolab.rng import RngStream

ACCEPTANCE_LINES: list[str] = []


@pytest.fixture
def rng():
    return RngStream(20240611)


def record(line: str) -> None:
    print(line)
    ACCEPTANCE_LINES.append(line)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


def pytest_configure(config):
    logging.getLogger("ergolab").setLevel(logging.ERROR)
