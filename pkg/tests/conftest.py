import time

import pytest

# criterion number -> (passed, message); filled by tests/test_acceptance.py
ACCEPTANCE = {}


@pytest.fixture
def criterion():
    """Record the outcome of one acceptance criterion."""

    def record(number, passed, message):
        ACCEPTANCE[number] = (bool(passed), message)
        print(f"[{'PASS' if passed else 'FAIL'}] criterion {number}: {message}")

    return record


@pytest.fixture(scope="session")
def gingerbread_run():
    """One optimization of the bundled gingerbread problem, shared by the slow tests."""
    from multimorph import opt
    from multimorph.problems import load_example
    problem = load_example("gingerbread")
    t0 = time.perf_counter()
    result = opt.optimize(problem)
    return problem, result, time.perf_counter() - t0


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(ACCEPTANCE, key=lambda k: (int(str(k).split("/")[0]), str(k))):
        passed, message = ACCEPTANCE[number]
        terminalreporter.write_line(f"[{'PASS' if passed else 'FAIL'}] criterion {number}: {message}")
