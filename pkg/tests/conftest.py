import pytest

from whmc import BetaClass, BetaParams, BrownianMotion, StreamFamily


@pytest.fixture(scope="session")
def bm():
    return BrownianMotion(0.1, 1.0)


@pytest.fixture(scope="session")
def beta15():
    return BetaClass(BetaParams.symmetric(1.5, 0.0))


@pytest.fixture(scope="session")
def beta25():
    return BetaClass(BetaParams.symmetric(2.5, 1.0))


@pytest.fixture
def streams():
    return StreamFamily(1234)


def pytest_terminal_summary(terminalreporter):
    from tests_support import ACCEPTANCE_LINES

    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)
