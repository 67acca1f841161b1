import pytest

# criterion number -> (passed, detail); filled by test_acceptance.py
ACCEPTANCE = {}


def record(n, title, passed, detail):
    ACCEPTANCE[n] = (title, bool(passed), detail)
    print(f"ACCEPTANCE {n} {'PASS' if passed else 'FAIL'} {title}: {detail}")


@pytest.fixture()
def acceptance():
    return record


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE):
        title, ok, detail = ACCEPTANCE[n]
        terminalreporter.write_line(f"criterion {n}: {'PASS' if ok else 'FAIL'} {title}: {detail}")
