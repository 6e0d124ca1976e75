import pytest

_LINES = pytest.StashKey[list]()


def pytest_configure(config):
    config.stash[_LINES] = []


@pytest.fixture
def criterion(request):
    """Record one PASS/FAIL line per acceptance criterion.

    Call the returned function with ``(number, title, ok, detail)``; a
    test that errors before recording is reported as FAIL.
    """
    seen = []

    def record(number, title, ok, detail=""):
        line = f"{'PASS' if ok else 'FAIL'} criterion {number:2d}: {title}" + (f" ({detail})" if detail else "")
        seen.append(line)
        request.config.stash[_LINES].append(line)
        print(line)
        return ok

    yield record
    if not seen:
        line = f"FAIL {request.node.name}: raised before reaching a verdict"
        request.config.stash[_LINES].append(line)


def pytest_terminal_summary(terminalreporter, config):
    lines = config.stash.get(_LINES, [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines, key=lambda s: int(s.split("criterion")[1].split(":")[0]) if "criterion" in s else 99):
            terminalreporter.write_line(line)
