import pytest

from thermstack.model import GridSpec
from thermstack.scenarios import SCENARIO_IDS, run_scenario

# criterion label -> (passed, detail), filled by test_acceptance
ACCEPTANCE: dict[str, tuple[bool, str]] = {}


@pytest.fixture(scope="session")
def reports64():
    """Every built-in scenario solved once at 64x64."""
    grid = GridSpec(64, 64)
    return {sid: run_scenario(sid, grid) for sid in SCENARIO_IDS}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for label in sorted(ACCEPTANCE, key=lambda s: int(s.split()[0])):
        ok, detail = ACCEPTANCE[label]
        terminalreporter.write_line(f"{'PASS' if ok else 'FAIL'}  {label}: {detail}")


@pytest.fixture(scope="session")
def search2d():
    """(problem, evaluator, exhaustive result) for four processors on one die at a 4 mm step."""
    from thermstack.placement import Evaluator, optimize_exhaustive, processor_problem

    problem = processor_problem(layers=1)
    ev = Evaluator(problem)
    return problem, ev, optimize_exhaustive(problem, ev)


@pytest.fixture(scope="session")
def search3d():
    """Same processors spread over the two silicon layers of the stacked die."""
    from thermstack.placement import Evaluator, optimize_exhaustive, processor_problem

    problem = processor_problem(layers=3)
    ev = Evaluator(problem)
    return problem, ev, optimize_exhaustive(problem, ev)
