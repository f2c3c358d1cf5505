_criteria = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(name): acceptance criterion checked by a test")


def pytest_collection_modifyitems(items):
    for item in items:
        mark = item.get_closest_marker("criterion")
        if mark is not None:
            item.user_properties.append(("criterion", mark.args[0]))


def pytest_runtest_logreport(report):
    props = dict(report.user_properties)
    name = props.get("criterion")
    if name is None or (report.when != "call" and report.passed):
        return
    status = "FAIL" if report.failed else "SKIP" if report.skipped else "PASS"
    old_status, details = _criteria.get(name, ("PASS", []))
    if old_status == "FAIL" or (old_status == "SKIP" and status == "PASS"):
        status = old_status
    if props.get("detail"):
        details = details + [props["detail"]]
    _criteria[name] = (status, details)


def pytest_terminal_summary(terminalreporter):
    if not _criteria:
        return
    terminalreporter.section("acceptance criteria")
    for name, (status, details) in _criteria.items():
        line = f"{status}  {name}"
        if details:
            line += "  [" + "; ".join(details) + "]"
        terminalreporter.write_line(line)
