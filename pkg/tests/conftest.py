from collections import defaultdict

ACCEPTANCE = defaultdict(list)


def record(criterion, name, ok, detail):
    """Store one acceptance measurement; printed in the terminal summary."""
    ACCEPTANCE[criterion].append((name, bool(ok), detail))


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for criterion in sorted(ACCEPTANCE):
        parts = ACCEPTANCE[criterion]
        ok = all(p[1] for p in parts)
        details = "; ".join(f"{name}: {detail}" for name, _, detail in parts)
        terminalreporter.write_line(f"criterion {criterion:>2} {'PASS' if ok else 'FAIL'}  {details}")
