import functools

import pytest

from mcmcsel.experiment import reproduction_recipe, run_config


@functools.lru_cache(maxsize=None)
def _recipe_report(figure: int, seed: int):
    return run_config(reproduction_recipe(figure, master_seed=seed))


@pytest.fixture(scope="session")
def recipe_report():
    """``recipe_report(figure, seed)``: the comparison report, computed once per session."""
    return _recipe_report


_CRITERIA = []


@pytest.fixture
def record_criterion():
    """Record (and print) the pass/fail line of one acceptance criterion."""

    def record(number: int, ok: bool, detail: str):
        line = f"criterion {number:2d}: {'PASS' if ok else 'FAIL'}  {detail}"
        print(line)
        _CRITERIA.append((number, line))
        return ok

    return record


def pytest_terminal_summary(terminalreporter):
    if _CRITERIA:
        terminalreporter.section("acceptance criteria")
        for _, line in sorted(_CRITERIA):
            terminalreporter.write_line(line)
