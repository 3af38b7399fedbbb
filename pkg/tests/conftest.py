import sys

import numpy as np
import pytest


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def pytest_terminal_summary(terminalreporter):
    module = sys.modules.get("test_acceptance")
    report = getattr(module, "REPORT", None)
    if not report:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(report):
        ok, title, seconds, detail = report[number]
        line = f"criterion {number:2d} {'PASS' if ok else 'FAIL'} ({seconds:.1f}s) {title}"
        terminalreporter.write_line(line + (f": {detail}" if detail else ""))
