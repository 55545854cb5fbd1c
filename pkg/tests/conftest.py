"""Shared test infrastructure.

The acceptance suite registers one human-readable PASS/FAIL line per
criterion; the hook below prints the collected lines in the terminal
summary of every run, so the verdicts are visible without ``-s``.
"""

from __future__ import annotations

ACCEPTANCE_LINES: list[str] = []


def record_acceptance(label: str, ok: bool, detail: str) -> bool:
    verdict = "PASS" if ok else "FAIL"
    ACCEPTANCE_LINES.append(f"[{verdict}] {label}: {detail}")
    return ok


def pytest_terminal_summary(terminalreporter) -> None:  # noqa: ANN001
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.write_sep("=", "acceptance criteria")
    for line in ACCEPTANCE_LINES:
        terminalreporter.write_line(line)
