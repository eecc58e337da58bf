import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

# criterion number -> (title, outcome, detail), filled as acceptance tests report
_ACCEPTANCE: dict[int, tuple[str, str, str]] = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(n, title): acceptance criterion covered by the test")


@pytest.hookimpl(tryfirst=True)
def pytest_runtest_setup(item):
    m = item.get_closest_marker("criterion")
    if m is not None:
        item.user_properties += [("criterion", m.args[0]), ("title", m.args[1])]


def pytest_runtest_logreport(report):
    if report.when != "call" and not (report.when == "setup" and report.outcome != "passed"):
        return
    props = dict(report.user_properties)
    if "criterion" not in props:
        return
    outcome = "PASS" if report.passed else "FAIL"
    _ACCEPTANCE[props["criterion"]] = (props.get("title", ""), outcome, props.get("detail", ""))


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    tr = terminalreporter
    tr.section("acceptance criteria")
    for n in sorted(_ACCEPTANCE):
        title, outcome, detail = _ACCEPTANCE[n]
        tr.write_line(f"[{outcome}] {n:2d}. {title}" + (f" | {detail}" if detail else ""))
    passed = sum(v[1] == "PASS" for v in _ACCEPTANCE.values())
    tr.write_line(f"{passed}/{len(_ACCEPTANCE)} acceptance criteria passed")
