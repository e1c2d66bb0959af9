"""Collects one pass/fail line per acceptance criterion for the terminal summary."""

RESULTS: dict = {}


def record(number: int, title: str, ok: bool, detail: str) -> None:
    line = f"criterion {number} [{'PASS' if ok else 'FAIL'}] {title}: {detail}"
    RESULTS[number] = line
    print(line, flush=True)
