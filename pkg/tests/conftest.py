import os
import sys

import numpy as np
import pytest

sys.path.insert(0, os.path.dirname(__file__))

from oracles import make_panel  # noqa: E402

from geee import LongitudinalDataset  # noqa: E402


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


@pytest.fixture
def balanced(rng):
    ys, Xs, _ = make_panel(rng, n=40, m=4, p=3, rho=0.6)
    return LongitudinalDataset(ys, Xs)


@pytest.fixture
def unbalanced(rng):
    sizes = rng.integers(1, 6, size=60)
    ys, Xs, pos = make_panel(rng, n=60, sizes=sizes, p=2, rho=0.5, positions=True)
    return LongitudinalDataset(ys, Xs, positions=pos)


ACCEPTANCE_LINES = []


@pytest.fixture
def acceptance():
    """Record one PASS/FAIL line per acceptance criterion."""
    def record(number, passed, detail, seconds):
        line = f"criterion {number}: {'PASS' if passed else 'FAIL'} ({seconds:.1f} s) {detail}"
        ACCEPTANCE_LINES.append(line)
        print(line)
        return passed
    return record


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
