import pytest

_REPORT_KEY = pytest.StashKey[list]()


def pytest_configure(config):
    config.stash[_REPORT_KEY] = []


@pytest.fixture
def acceptance(request):
    """Record one pass/fail line per acceptance criterion.

    Usage: ``acceptance(number, title, passed, detail)``; the line is
    printed in the terminal summary and the test fails if ``passed`` is
    false.
    """
    lines = request.config.stash[_REPORT_KEY]

    def record(number, title, passed, detail=""):
        status = "PASS" if passed else "FAIL"
        lines.append(f"[{status}] criterion {number}: {title} {detail}".rstrip())
        assert passed, f"criterion {number} failed: {detail}"

    return record


def pytest_terminal_summary(terminalreporter, config):
    lines = config.stash.get(_REPORT_KEY, [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines, key=lambda s: int(s.split("criterion ")[1].split(":")[0])):
            terminalreporter.write_line(line)
