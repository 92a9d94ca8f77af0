import pytest

from seqparadox.bayes import DesignPrior, ThetaPrior
from seqparadox.trial import DesignConfig, summarize, table1

# (criterion, passed, detail) lines collected by the acceptance module
ACCEPTANCE_LINES: list[str] = []


@pytest.fixture
def example_data():
    return table1()


@pytest.fixture
def example_summary(example_data):
    return summarize(example_data)


@pytest.fixture
def example_design():
    return DesignConfig(n=5, sigma=2.0, psi=1.0, investigator="B")


@pytest.fixture
def example_prior():
    return ThetaPrior(mu=1.0, tau=2.0)


@pytest.fixture
def example_design_prior():
    return DesignPrior(a=-0.5, b=1.0, omega=0.1)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
