"""Shared pytest glue: one pass/fail line per acceptance criterion."""


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    entries = []
    for outcome in ("passed", "failed", "error"):
        for report in terminalreporter.stats.get(outcome, []):
            nodeid = getattr(report, "nodeid", "")
            if "test_acceptance" in nodeid and getattr(report, "when", "call") == "call":
                entries.append((nodeid.split("::")[-1], outcome))
    if not entries:
        return
    terminalreporter.write_sep("-", "acceptance criteria")
    for name, outcome in sorted(entries):
        status = "PASS" if outcome == "passed" else "FAIL"
        terminalreporter.write_line(f"{status}  {name}")
