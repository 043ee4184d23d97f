ACCEPTANCE_LINES = []


def record_criterion(number: int, title: str, ok: bool, detail: str):
    line = f"criterion {number:2d} ({title}): {'PASS' if ok else 'FAIL'} — {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
