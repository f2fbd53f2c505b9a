"""Shared pytest hooks: acceptance verdict lines are collected and echoed at the end of the run."""

VERDICTS: list[str] = []


def record_verdict(number: int, name: str, ok: bool, detail: str) -> None:
    line = f"criterion {number:>2} [{'PASS' if ok else 'FAIL'}] {name}: {detail}"
    VERDICTS.append(line)
    print(line, flush=True)


def pytest_terminal_summary(terminalreporter):
    if VERDICTS:
        terminalreporter.section("acceptance criteria")
        for line in sorted(VERDICTS, key=lambda l: int(l.split()[1])):
            terminalreporter.write_line(line)
