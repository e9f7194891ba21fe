import pytest

_outcomes: dict[str, list] = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(label, text): acceptance criterion checked by the test")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    mark = item.get_closest_marker("criterion")
    if mark is None:
        return
    if rep.when == "call" or (rep.when == "setup" and not rep.passed):
        label, text = mark.args
        _outcomes.setdefault(label, [text, []])[1].append(rep.passed)


def pytest_terminal_summary(terminalreporter):
    if not _outcomes:
        return
    terminalreporter.section("acceptance criteria")
    for label, (text, results) in _outcomes.items():
        status = "PASS" if all(results) else "FAIL"
        terminalreporter.write_line(f"{status}  criterion {label}: {text}")
