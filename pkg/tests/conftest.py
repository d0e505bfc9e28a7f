import pytest

# criterion number -> (passed, description, detail)
ACCEPTANCE: dict[int, tuple[bool, str, str]] = {}


@pytest.fixture
def acceptance():
    def record(number: int, name: str, checks: dict[str, tuple[float, bool]]):
        passed = all(ok for _, ok in checks.values())
        detail = "; ".join(f"{k}={v:.6g}{'' if ok else ' (miss)'}" for k, (v, ok) in checks.items())
        ACCEPTANCE[number] = (passed, name, detail)
        line = f"criterion {number:2d} {'PASS' if passed else 'FAIL'}  {name}  [{detail}]"
        print(line)
        assert passed, line
    return record


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(ACCEPTANCE):
        passed, name, detail = ACCEPTANCE[number]
        terminalreporter.write_line(f"criterion {number:2d} {'PASS' if passed else 'FAIL'}  {name}  [{detail}]")
