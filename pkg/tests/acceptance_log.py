"""PASS/FAIL lines collected by the acceptance tests, echoed in the pytest summary."""
LINES: list[str] = []


def report(number: int, ok: bool, detail: str) -> bool:
    line = f"{'PASS' if ok else 'FAIL'} {number}: {detail}"
    LINES.append(line)
    print(line)
    return ok
