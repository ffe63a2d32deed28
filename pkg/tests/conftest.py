import sys
from pathlib import Path

sys.path.insert(0, str(Path(__file__).parent))

_acceptance_lines: list[str] = []


def record_acceptance_line(line: str) -> None:
    """Collect a release-gate verdict for the end-of-run summary."""
    _acceptance_lines.append(line)


def pytest_terminal_summary(terminalreporter):
    if _acceptance_lines:
        terminalreporter.section("acceptance criteria")
        for line in _acceptance_lines:
            terminalreporter.write_line(line)
