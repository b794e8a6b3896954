import pytest

_criteria = {}
_outcomes = {}
_notes = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(number, text): acceptance criterion covered by the test")


def pytest_collection_modifyitems(items):
    for item in items:
        mark = item.get_closest_marker("criterion")
        if mark is not None:
            _criteria[item.nodeid] = mark.args


def pytest_runtest_logreport(report):
    if report.nodeid not in _criteria:
        return
    _notes.setdefault(report.nodeid, []).extend(v for k, v in report.user_properties if k == "note"
                                                and v not in _notes.get(report.nodeid, []))
    if report.when == "call" or report.failed or report.skipped:
        prev = _outcomes.get(report.nodeid, "passed")
        _outcomes[report.nodeid] = prev if prev != "passed" else report.outcome


def pytest_terminal_summary(terminalreporter):
    if not _outcomes:
        return
    by_number = {}
    for nodeid, (number, text) in _criteria.items():
        if nodeid in _outcomes:
            entry = by_number.setdefault(number, [text, [], []])
            entry[1].append(_outcomes[nodeid])
            entry[2].extend(_notes.get(nodeid, []))
    terminalreporter.section("acceptance criteria")
    for number in sorted(by_number):
        text, outcomes, notes = by_number[number]
        status = "PASS" if all(o == "passed" for o in outcomes) else "FAIL"
        terminalreporter.write_line(f"criterion {number}: {status}  {text}  ({len(outcomes)} tests)")
        for note in notes:
            terminalreporter.write_line(f"    {note}")


@pytest.fixture
def tmp_cwd(tmp_path, monkeypatch):
    monkeypatch.chdir(tmp_path)
    return tmp_path
