import re

CRITERIA = {
    1: "spasticity model suite",
    2: "physics suite",
    3: "reward suite",
    4: "SAC math suite",
    5: "learning smoke test",
    6: "PID baseline behaviour",
    7: "settling-time trend",
    8: "eval determinism",
    9: "full pipeline dry run",
}

_outcomes = {}


def pytest_runtest_logreport(report):
    m = re.search(r"test_criterion_(\d+)_", report.nodeid)
    if not m:
        return
    n = int(m.group(1))
    if report.when == "call" or report.outcome != "passed":
        _outcomes[n] = "PASS" if report.passed else "FAIL"


def pytest_terminal_summary(terminalreporter):
    if not _outcomes:
        return
    terminalreporter.section("acceptance criteria")
    for n, name in CRITERIA.items():
        if n in _outcomes:
            terminalreporter.write_line(f"criterion {n} ({name}): {_outcomes[n]}")
