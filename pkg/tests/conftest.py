import pytest

_VERDICTS = pytest.StashKey[list]()


@pytest.fixture
def verdict(request, capsys):
    """Record and print one PASS/FAIL line for an acceptance criterion, then assert it."""
    log = request.config.stash.setdefault(_VERDICTS, [])

    def record(criterion: str, ok: bool, detail: str) -> None:
        line = f"[{'PASS' if ok else 'FAIL'}] {criterion}: {detail}"
        log.append(line)
        with capsys.disabled():
            print(f"\n{line}")
        assert ok, line

    return record


def pytest_terminal_summary(terminalreporter, config):
    lines = config.stash.get(_VERDICTS, [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)
