import sys
from pathlib import Path

# make the shared oracles importable as a plain module
sys.path.insert(0, str(Path(__file__).parent))


def pytest_terminal_summary(terminalreporter):
    from _report import LINES
    if LINES:
        terminalreporter.section("acceptance criteria")
        for line in LINES:
            terminalreporter.write_line(line)


from hypothesis import settings  # noqa: E402

# reproducible property tests: the same examples on every run
settings.register_profile("repro", derandomize=True)
settings.load_profile("repro")
