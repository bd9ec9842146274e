"""Shared pytest hooks: prints the acceptance verdict table after a run."""

from __future__ import annotations

ACCEPTANCE: list[tuple[int, str, str, str]] = []


def record(number: int, title: str, passed: bool | None, detail: str) -> None:
    """Store one acceptance verdict; ``passed=None`` marks a skipped criterion."""
    verdict = "SKIP" if passed is None else ("PASS" if passed else "FAIL")
    ACCEPTANCE.append((number, title, verdict, detail))
    print(f"[criterion {number:2d}] {verdict} {title}: {detail}")


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for number, title, verdict, detail in sorted(ACCEPTANCE):
        terminalreporter.write_line(f"{verdict:4s} {number:2d}. {title}: {detail}")
