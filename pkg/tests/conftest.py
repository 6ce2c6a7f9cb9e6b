"""Shared fixtures and the acceptance-suite reporter.

Tests marked ``@pytest.mark.acceptance("...")`` are summarized at the end
of the run with one PASS/FAIL line per criterion.
"""

from __future__ import annotations

import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

_ACCEPTANCE_RESULTS: list[tuple[str, str]] = []


def pytest_configure(config):
    config.addinivalue_line(
        "markers", "acceptance(name): marks a test as one acceptance criterion"
    )


def pytest_runtest_makereport(item, call):
    if call.when != "call":
        return
    marker = item.get_closest_marker("acceptance")
    if marker is None:
        return
    name = marker.args[0] if marker.args else item.name
    outcome = "PASS" if call.excinfo is None else "FAIL"
    _ACCEPTANCE_RESULTS.append((name, outcome))


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if not _ACCEPTANCE_RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for name, outcome in _ACCEPTANCE_RESULTS:
        terminalreporter.write_line(f"{outcome}  {name}")


@pytest.fixture
def tiny_png(tmp_path):
    """Factory writing a small solid-color PNG and returning its path."""
    from PIL import Image

    counter = {"n": 0}

    def make(color=(128, 40, 200), size=(8, 8), name=None):
        counter["n"] += 1
        path = tmp_path / (name or f"img_{counter['n']:04d}.png")
        Image.new("RGB", size, color).save(path)
        return path

    return make
