from collections import defaultdict

_outcomes = defaultdict(list)


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(k): acceptance criterion the test belongs to")


def pytest_collection_modifyitems(items):
    for item in items:
        marker = item.get_closest_marker("criterion")
        if marker is not None:
            item.user_properties.append(("criterion", marker.args[0]))


def pytest_runtest_logreport(report):
    crit = dict(report.user_properties).get("criterion")
    if crit is None:
        return
    if report.when == "call" or report.outcome != "passed":
        _outcomes[crit].append((report.nodeid, report.outcome))


def pytest_terminal_summary(terminalreporter):
    if not _outcomes:
        return
    from test_acceptance import CRITERIA

    terminalreporter.section("acceptance criteria")
    for crit in sorted(CRITERIA):
        results = _outcomes.get(crit, [])
        failed = [nodeid for nodeid, outcome in results if outcome != "passed"]
        if not results:
            status = "SKIP"
        else:
            status = "FAIL" if failed else "PASS"
        line = f"criterion {crit:>2}: {status}  {CRITERIA[crit]} ({len(results) - len(failed)}/{len(results)} checks)"
        terminalreporter.write_line(line)
        for nodeid in failed:
            terminalreporter.write_line(f"    failing: {nodeid}")
