import pytest

from scrooge_sim.profiles import load_profile


@pytest.fixture(scope="session")
def pi3b():
    return load_profile("3B")


@pytest.fixture(scope="session")
def pi3bplus():
    return load_profile("3B+")


@pytest.fixture(scope="session")
def pi4b():
    return load_profile("4B")


@pytest.fixture(scope="session")
def profiles(pi3b, pi3bplus, pi4b):
    return {"3B": pi3b, "3B+": pi3bplus, "4B": pi4b}


_ACCEPTANCE_LINES: list[str] = []


@pytest.fixture
def verdict_line():
    """Print a PASS/FAIL line now and repeat it in the terminal summary."""
    def emit(number, name, ok, detail):
        line = f"criterion {number} {'PASS' if ok else 'FAIL'}: {name} | {detail}"
        print(line)
        _ACCEPTANCE_LINES.append(line)
        return ok
    return emit


def pytest_terminal_summary(terminalreporter):
    if _ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in _ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
