import pytest

_LOG_KEY = pytest.StashKey[list]()


def pytest_configure(config):
    config.stash[_LOG_KEY] = []


@pytest.fixture(scope="session")
def criteria_log(pytestconfig):
    """Collects (status, criterion, detail) lines printed after the run."""
    return pytestconfig.stash[_LOG_KEY]


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = config.stash.get(_LOG_KEY, [])
    if not lines:
        return
    terminalreporter.section("acceptance criteria")
    for status, name, detail in lines:
        terminalreporter.write_line(f"{status:<6} {name}: {detail}")
