import pathlib

REPORT = pathlib.Path(__file__).resolve().parent.parent / "acceptance_report.txt"


def pytest_terminal_summary(terminalreporter):
    """Echo the acceptance gate's per-criterion lines past output capture."""
    if REPORT.exists():
        terminalreporter.section("acceptance criteria")
        for line in REPORT.read_text().splitlines():
            terminalreporter.write_line(line)
