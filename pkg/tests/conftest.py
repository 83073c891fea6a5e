import pytest

ACCEPTANCE = pytest.StashKey[list]()


@pytest.fixture
def acceptance_log(request):
    return request.config.stash.setdefault(ACCEPTANCE, [])


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    records = config.stash.get(ACCEPTANCE, [])
    if not records:
        return
    terminalreporter.section("acceptance criteria")
    for rec in records:
        terminalreporter.write_line(f"{rec.line()} ({rec.seconds:.1f} s)")
    passed = sum(r.passed for r in records)
    terminalreporter.write_line(f"{passed}/{len(records)} criteria pass")
