from __future__ import annotations

import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance")
    if mod is None or not mod.RESULTS:
        return
    tr = terminalreporter
    tr.section("acceptance criteria")
    for n in sorted(mod.RESULTS):
        ok, detail, dt = mod.RESULTS[n]
        tr.write_line(f"criterion {n:2d} {'PASS' if ok else 'FAIL'} ({dt:6.1f}s) {mod.TITLES[n]}: {detail}")
