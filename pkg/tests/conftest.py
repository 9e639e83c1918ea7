import pytest

CRITERIA: list[str] = []
_config = None


def pytest_configure(config):
    global _config
    _config = config


def emit(line):
    """Write a line to the terminal even while output is captured."""
    CRITERIA.append(line)
    capman = _config.pluginmanager.getplugin("capturemanager") if _config else None
    if capman is None:
        print(line, flush=True)
        return
    with capman.global_and_fixture_disabled():
        print("\n" + line, flush=True)


def pytest_terminal_summary(terminalreporter):
    if CRITERIA:
        terminalreporter.section("acceptance criteria")
        for line in CRITERIA:
            terminalreporter.write_line(line)
