def pytest_terminal_summary(terminalreporter):
    from acceptance_report import REPORT

    if not REPORT:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(REPORT):
        parts = REPORT[number]
        status = "PASS" if all(ok for _, ok, _ in parts) else "FAIL"
        detail = "; ".join(f"{label} {'ok' if ok else 'FAILED'} ({info})" for label, ok, info in parts)
        terminalreporter.write_line(f"criterion {number:2d}: {status}  {detail}")
