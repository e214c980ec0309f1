import functools

import pytest

from vmksim import Simulation, list_scenarios, load_scenario


@functools.lru_cache(maxsize=None)
def bundled_run(name: str) -> Simulation:
    """One shared run per bundled scenario; callers must not mutate it."""
    return Simulation(load_scenario(name), strict=False).run()


@pytest.fixture(scope="session")
def run_bundled():
    return bundled_run


@pytest.fixture(params=list_scenarios())
def bundled_name(request):
    return request.param


# -- acceptance summary -------------------------------------------------------

_criteria: dict = {}


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    mark = item.get_closest_marker("criterion")
    if mark is None or (rep.when != "call" and not rep.failed):
        return
    number, title = mark.args
    detail = dict(item.user_properties).get("measured", "")
    prev = _criteria.get(number)
    passed = rep.passed and (prev is None or prev[1])
    _criteria[number] = (title, passed, detail)


def pytest_terminal_summary(terminalreporter):
    if not _criteria:
        return
    terminalreporter.write_sep("=", "acceptance criteria")
    for number in sorted(_criteria):
        title, passed, detail = _criteria[number]
        line = f"{'PASS' if passed else 'FAIL'} criterion {number:2d}: {title}"
        terminalreporter.write_line(line + (f" [{detail}]" if detail else ""))
