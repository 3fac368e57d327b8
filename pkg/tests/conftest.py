from collections import OrderedDict

# criterion number -> list of (part, ok, detail), filled by test_acceptance
ACCEPTANCE = OrderedDict()


def record(n: int, part: str, ok: bool, detail: str):
    ACCEPTANCE.setdefault(n, []).append((part, bool(ok), detail))
    print(f"criterion {n} [{part}]: {'PASS' if ok else 'FAIL'}  {detail}")


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    tr = terminalreporter
    tr.section("acceptance criteria")
    for n in sorted(ACCEPTANCE):
        parts = ACCEPTANCE[n]
        ok = all(p[1] for p in parts)
        tr.write_line(f"criterion {n}: {'PASS' if ok else 'FAIL'}")
        for part, pok, detail in parts:
            tr.write_line(f"    {part}: {'pass' if pok else 'FAIL'}  {detail}")
