from hypothesis import settings

settings.register_profile("unicls", deadline=None)
settings.load_profile("unicls")

_CRITERIA = {}  # nodeid -> criterion number
_OUTCOMES = {}  # criterion number -> list of (nodeid, passed)


def pytest_collection_modifyitems(items):
    for item in items:
        mark = item.get_closest_marker("acceptance")
        if mark is not None:
            _CRITERIA[item.nodeid] = int(mark.args[0])


def pytest_runtest_logreport(report):
    crit = _CRITERIA.get(report.nodeid)
    if crit is None:
        return
    if report.when == "call" or report.failed:
        _OUTCOMES.setdefault(crit, []).append((report.nodeid, report.passed))


def pytest_terminal_summary(terminalreporter):
    if not _OUTCOMES:
        return
    terminalreporter.section("acceptance criteria")
    for crit in sorted(_OUTCOMES):
        rows = _OUTCOMES[crit]
        ok = all(passed for _, passed in rows)
        names = ", ".join(nodeid.split("::")[-1] for nodeid, _ in rows)
        terminalreporter.write_line(f"criterion {crit:2d}: {'PASS' if ok else 'FAIL'}  ({names})")
