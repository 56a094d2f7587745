VERDICTS: dict = {}


def record(criterion: int, passed: bool, detail: str) -> None:
    line = "criterion %2d: %s  %s" % (criterion, "PASS" if passed else "FAIL", detail)
    VERDICTS[criterion] = line
    print(line)


def pytest_terminal_summary(terminalreporter):
    if VERDICTS:
        terminalreporter.section("acceptance criteria")
        for k in sorted(VERDICTS):
            terminalreporter.write_line(VERDICTS[k])
