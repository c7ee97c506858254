"""Shared store for the per-criterion result lines printed after the run."""

from __future__ import annotations

# (criterion number, title, passed, detail)
ACCEPTANCE: list[tuple[int, str, bool, str]] = []


def record(number: int, title: str, passed: bool, detail: str = "") -> None:
    ACCEPTANCE.append((number, title, bool(passed), detail))
