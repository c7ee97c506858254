from __future__ import annotations

import numpy as np
import pytest

from hexform.hexgrid import build_hex_mesh, equilateral_corners, subdivide_triangle
from hexform.pipeline import default_config, run_pipeline

from acceptance_log import ACCEPTANCE


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for number, title, passed, detail in sorted(ACCEPTANCE, key=lambda r: r[0]):
        status = "PASS" if passed else "FAIL"
        line = f"[{status}] {number:>2}. {title}"
        terminalreporter.write_line(line + (f"  ({detail})" if detail else ""))


def make_mesh(n: int, side: float = 6.0):
    return build_hex_mesh(subdivide_triangle(*equilateral_corners(side), n))


@pytest.fixture(scope="session")
def mesh9():
    return make_mesh(9)


@pytest.fixture(scope="session")
def default_run(tmp_path_factory):
    """One end-to-end run of the shipped configuration."""
    out = tmp_path_factory.mktemp("run_a")
    report = run_pipeline(default_config(), out)
    return out, report


def rotation(axis, angle) -> np.ndarray:
    a = np.asarray(axis, float)
    a = a / np.linalg.norm(a)
    K = np.array([[0, -a[2], a[1]], [a[2], 0, -a[0]], [-a[1], a[0], 0]])
    return np.eye(3) + np.sin(angle) * K + (1 - np.cos(angle)) * K @ K
