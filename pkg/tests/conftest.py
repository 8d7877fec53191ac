import pytest


def pytest_configure(config):
    config.criteria_results = {}


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    mark = item.get_closest_marker("criterion")
    if mark is None or not (rep.when == "call" or rep.failed):
        return
    detail = dict(item.user_properties).get("detail", rep.longreprtext.splitlines()[-1] if rep.failed else "")
    item.config.criteria_results[mark.args[0]] = (rep.passed, detail)


def pytest_terminal_summary(terminalreporter, config):
    results = config.criteria_results
    if not results:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(results):
        ok, detail = results[k]
        terminalreporter.write_line(f"{'PASS' if ok else 'FAIL'} criterion {k}: {detail}")
