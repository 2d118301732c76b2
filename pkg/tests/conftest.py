import sys
from pathlib import Path

sys.path.insert(0, str(Path(__file__).parent))

# (criterion number, PASS/FAIL, detail) appended by test_acceptance.py
ACCEPTANCE_RESULTS = []


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for num, status, detail in sorted(ACCEPTANCE_RESULTS):
        terminalreporter.write_line(f"criterion {num}: {status}  {detail}")
